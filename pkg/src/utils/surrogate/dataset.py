"""
Simulator-generated input/output sets for the surrogate.

Trajectories are driven by piecewise-constant steps in the feed flow u and the solvent
flow q, sliced into sliding windows of N+1 samples per signal and labelled with the next
measured output and the raffinate-constraint flag.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from utils.config import IntegratorOptions, PlantParams
from utils.constants import DATASET_DECIMALS
from utils.errors import CascadeError, DimensionMismatchError
from utils.logging_utils import MasterLogger
from utils.plant.dae import JacobianCache, integrate_period, steady_state

SPLIT_NAMES = ("train", "val", "test")


def theta_columns(N: int) -> List[str]:
    """Column names of a theta vector, oldest first: y_k-N .. y_k, u_k-N .. u_k, q_k-N .. q_k."""
    lags = [f"k-{lag}" if lag else "k" for lag in range(N, -1, -1)]
    return [f"{signal}_{lag}" for signal in ("y", "u", "q") for lag in lags]


@dataclass
class ThetaVector:
    """Rolling histories of y, u and q (chronological, oldest first)."""

    y_hist: np.ndarray
    u_hist: np.ndarray
    q_hist: np.ndarray

    def __post_init__(self):
        self.y_hist = np.asarray(self.y_hist, dtype=float)
        self.u_hist = np.asarray(self.u_hist, dtype=float)
        self.q_hist = np.asarray(self.q_hist, dtype=float)
        if not len(self.y_hist) == len(self.u_hist) == len(self.q_hist):
            raise DimensionMismatchError("y, u and q histories must have equal length")

    @property
    def N(self) -> int:
        return len(self.y_hist) - 1

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.y_hist, self.u_hist, self.q_hist])

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "ThetaVector":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or len(theta) % 3:
            raise DimensionMismatchError(f"theta length {theta.shape} is not a multiple of 3")
        y, u, q = np.split(theta, 3)
        return cls(y, u, q)


@dataclass
class ExcitationPlan:
    """
    Seeded generator of step sequences for u and q.

    A share of trajectories dwells beyond u_saturation for half of their holds, so the
    raffinate constraint is crossed and both classifier labels occur.
    """

    n_trajectories: int
    steps: int
    u_box: Tuple[float, float]
    q_box: Tuple[float, float]
    hold_range: Tuple[int, int] = (2, 20)
    saturated_share: float = 0.3
    u_saturation: Optional[float] = None
    seed: int = 0

    def _steps(self, rng: np.random.Generator, low: float, high: float, saturated: bool) -> np.ndarray:
        values = np.empty(self.steps)
        k = 0
        threshold = self.u_saturation
        while k < self.steps:
            hold = int(rng.integers(self.hold_range[0], self.hold_range[1] + 1))
            if saturated and threshold is not None and rng.random() < 0.5:
                value = rng.uniform(max(threshold, low), high)
            else:
                value = rng.uniform(low, high)
            values[k : k + hold] = value
            k += hold
        return values

    def sequences(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """One (u, q) pair of arrays per trajectory, each of length `steps`."""
        rng = np.random.default_rng(self.seed)
        n_saturated = int(round(self.saturated_share * self.n_trajectories))
        plans = []
        for i in range(self.n_trajectories):
            u_seq = self._steps(rng, *self.u_box, saturated=i < n_saturated)
            q_seq = self._steps(rng, *self.q_box, saturated=False)
            plans.append((u_seq, q_seq))
        return plans


def simulate_trajectory(
    params: PlantParams,
    options: IntegratorOptions,
    u_seq: np.ndarray,
    q_seq: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Runs the plant from the steady state of the first inputs through the step sequence.

    Returns:
        tuple: (y, z), each of length len(u_seq) + 1; y[k+1] follows from u_seq[k], q_seq[k].
    """
    state = steady_state(float(u_seq[0]), float(q_seq[0]), None, params, options)
    x, x_alg = state.x, state.x_alg
    cache = JacobianCache()
    y = np.empty(len(u_seq) + 1)
    z = np.empty(len(u_seq) + 1)
    y[0], z[0] = state.y, state.z
    for k, (u, q) in enumerate(zip(u_seq, q_seq)):
        x, x_alg, _ = integrate_period(x, float(u), float(q), params.T, options, params, x_alg=x_alg, cache=cache)
        y[k + 1] = x[2 * params.n_stages + params.feed_stage]
        z[k + 1] = x[2 * params.n_stages]
    return y, z


def _trajectory_task(index: int, params: PlantParams, options: IntegratorOptions, u_seq, q_seq):
    try:
        y, z = simulate_trajectory(params, options, u_seq, q_seq)
        return index, (y, z), None
    except CascadeError as e:
        return index, None, str(e)


def sliding_windows(
    y: np.ndarray, z: np.ndarray, u: np.ndarray, q: np.ndarray, N: int, z_tol: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cuts one trajectory into (theta, y_next, zbar_next) samples.

    theta(k) = [y(k-N..k), u(k-N..k), q(k-N..k)] predicts y(k+1); zbar(k+1) = 1{z(k+1) <= z_tol}.
    """
    K = len(u)
    ks = np.arange(N, K)
    offsets = np.arange(-N, 1)
    idx = ks[:, None] + offsets[None, :]
    theta = np.hstack([y[idx], u[idx], q[idx]])
    y_next = y[ks + 1]
    zbar_next = (z[ks + 1] <= z_tol).astype(int)
    return theta, y_next, zbar_next


def assign_split(n: int, fractions: Sequence[float], seed: int) -> np.ndarray:
    """Random train/val/test labels; val and test get at least one sample when n >= 3."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    if n >= 3:
        n_val, n_test = max(n_val, 1), max(n_test, 1)
    labels = np.full(n, "train", dtype=object)
    labels[order[:n_val]] = "val"
    labels[order[n_val : n_val + n_test]] = "test"
    return labels


@dataclass
class Dataset:
    N: int
    theta: np.ndarray
    y_next: np.ndarray
    zbar_next: np.ndarray
    split: np.ndarray
    z_tol: float = float("nan")
    theta_scaler: Optional[StandardScaler] = field(default=None, repr=False)
    y_scaler: Optional[StandardScaler] = field(default=None, repr=False)

    def __post_init__(self):
        if self.theta.shape[1] != 3 * (self.N + 1):
            raise DimensionMismatchError(f"theta has {self.theta.shape[1]} columns, expected {3 * (self.N + 1)}")

    def __len__(self) -> int:
        return len(self.y_next)

    def subset(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        mask = self.split == name
        return self.theta[mask], self.y_next[mask], self.zbar_next[mask]

    def fit_normalization(self) -> "Dataset":
        """Fits per-feature standardisation on the training split."""
        theta, y, _ = self.subset("train")
        self.theta_scaler = StandardScaler().fit(theta)
        self.y_scaler = StandardScaler().fit(y.reshape(-1, 1))
        return self

    def normalized(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.theta_scaler is None:
            self.fit_normalization()
        theta, y, zbar = self.subset(name)
        return (
            self.theta_scaler.transform(theta),
            self.y_scaler.transform(y.reshape(-1, 1)).ravel(),
            zbar,
        )

    def class_counts(self) -> Tuple[int, int]:
        safe = int(self.zbar_next.sum())
        return len(self) - safe, safe


def generate_dataset(
    params: PlantParams,
    excitation_plan: ExcitationPlan,
    N: int,
    n_samples: Optional[int],
    z_tol: float,
    options: IntegratorOptions = IntegratorOptions(),
    split: Sequence[float] = (0.98, 0.01, 0.01),
    workers: int = 1,
    seed: int = 0,
) -> Dataset:
    """
    Simulates the excitation plan and assembles the surrogate dataset.

    Args:
        params (PlantParams): Plant parameters.
        excitation_plan (ExcitationPlan): Input sequences to simulate.
        N (int): History length; theta holds N+1 samples per signal.
        n_samples (int | None): Cap on the number of samples kept (None keeps all).
        z_tol (float): Raffinate tolerance defining the zbar label.
        options (IntegratorOptions): Integrator settings.
        split (sequence): Train/val/test fractions.
        workers (int): Processes used for simulation.
        seed (int): Seed of the split permutation.

    Returns:
        Dataset: Rounded samples with split labels (normalisation not yet fitted).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    logger = MasterLogger.get_instance()
    plans = excitation_plan.sequences()
    results: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * len(plans)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_trajectory_task, i, params, options, u_seq, q_seq)
                for i, (u_seq, q_seq) in enumerate(plans)
            ]
            for future in as_completed(futures):
                i, output, error = future.result()
                results[i] = output
                if error:
                    logger.warning(f"Skipping trajectory {i}: {error}")
    else:
        for i, (u_seq, q_seq) in enumerate(plans):
            _, output, error = _trajectory_task(i, params, options, u_seq, q_seq)
            results[i] = output
            if error:
                logger.warning(f"Skipping trajectory {i}: {error}")

    pieces = []
    for output, (u_seq, q_seq) in zip(results, plans):
        if output is None:
            continue
        y, z = output
        pieces.append(sliding_windows(y, z, u_seq, q_seq, N, z_tol))
    if not pieces:
        raise CascadeError("Every trajectory of the excitation plan failed to simulate")

    theta = np.round(np.vstack([p[0] for p in pieces]), DATASET_DECIMALS)
    y_next = np.round(np.concatenate([p[1] for p in pieces]), DATASET_DECIMALS)
    zbar_next = np.concatenate([p[2] for p in pieces])
    if n_samples is not None:
        theta, y_next, zbar_next = theta[:n_samples], y_next[:n_samples], zbar_next[:n_samples]

    logger.info(
        f"Dataset: {len(y_next)} samples from {len(pieces)}/{len(plans)} trajectories, "
        f"{int(zbar_next.sum())} safe labels"
    )
    return Dataset(N, theta, y_next, zbar_next, assign_split(len(y_next), split, seed), z_tol)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(dataset.theta, columns=theta_columns(dataset.N))
    frame["y_next"] = dataset.y_next
    frame["zbar_next"] = dataset.zbar_next
    frame["split"] = dataset.split
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=f"%.{DATASET_DECIMALS}f")


def load_dataset(path: Union[str, Path], z_tol: float = float("nan")) -> Dataset:
    frame = pd.read_csv(path)
    theta_cols = [c for c in frame.columns if c[:2] in ("y_", "u_", "q_") and c != "y_next"]
    N = len(theta_cols) // 3 - 1
    if theta_cols != theta_columns(N):
        raise DimensionMismatchError(f"Unexpected dataset columns in {path}: {theta_cols}")
    return Dataset(
        N=N,
        theta=frame[theta_cols].to_numpy(dtype=float),
        y_next=frame["y_next"].to_numpy(dtype=float),
        zbar_next=frame["zbar_next"].to_numpy(dtype=int),
        split=frame["split"].to_numpy(dtype=object),
        z_tol=z_tol,
    )
