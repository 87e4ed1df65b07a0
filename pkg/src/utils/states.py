from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from utils.constants import BLOCK_NAMES, N_BLOCKS


class CommandEnum(Enum):
    RUN = "run"
    TRAIN = "train"
    SWEEP = "sweep"


class ControlMode(Enum):
    NMPC = "NMPC"
    STEADY_HOLD = "STEADY_HOLD"


@dataclass
class PlantState:
    """
    The 128 differential concentrations and the 32 interface concentrations of the cascade.

    Stages are 1-based in every accessor, matching the flowsheet numbering
    (stage 1 = raffinate end, stage 16 = loaded-solvent end).
    """

    x: np.ndarray
    x_alg: np.ndarray
    n_stages: int = 16
    feed_stage: int = 8

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.x_alg = np.asarray(self.x_alg, dtype=float)
        if self.x.shape != (N_BLOCKS * self.n_stages,):
            raise ValueError(f"x must have {N_BLOCKS * self.n_stages} entries, got {self.x.shape}")
        if self.x_alg.shape != (2 * self.n_stages,):
            raise ValueError(f"x_alg must have {2 * self.n_stages} entries, got {self.x_alg.shape}")

    def block(self, name: str) -> np.ndarray:
        """Returns a view of one named block (e.g. "U_aq_D") over all stages."""
        index = BLOCK_NAMES.index(name)
        return self.x[index * self.n_stages : (index + 1) * self.n_stages]

    def stage(self, n: int) -> Dict[str, float]:
        """Every concentration held at stage n, keyed by block name plus U_star/H_star."""
        if not 1 <= n <= self.n_stages:
            raise IndexError(f"stage {n} outside 1..{self.n_stages}")
        values = {name: float(self.block(name)[n - 1]) for name in BLOCK_NAMES}
        values["U_star"] = float(self.x_alg[n - 1])
        values["H_star"] = float(self.x_alg[self.n_stages + n - 1])
        return values

    @property
    def y(self) -> float:
        """Controlled variable: settler aqueous uranium at the stage just above the feed."""
        return float(self.x[2 * self.n_stages + self.feed_stage])

    @property
    def z(self) -> float:
        """Constrained variable: settler aqueous uranium at stage 1 (raffinate)."""
        return float(self.x[2 * self.n_stages])

    @property
    def settler_aqueous_uranium(self) -> np.ndarray:
        return self.block("U_aq_D").copy()

    def is_non_negative(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.x >= -tol) and np.all(self.x_alg >= -tol))

    def copy(self) -> PlantState:
        return PlantState(self.x.copy(), self.x_alg.copy(), self.n_stages, self.feed_stage)


@dataclass
class ControlDecision:
    u_applied: float
    u_sequence: np.ndarray
    mode: ControlMode
    objective: float = 0.0
    u_set: float = float("nan")
    zbar_predicted: int = 1
    rate_relaxed: bool = False  # Rate bound dropped for this period to regain feasibility
    alarm: bool = False  # No feasible plan even after relaxation; u_prev held
    target_clamped: bool = False  # y_set unreachable, u_set clamped to the nearest bound


@dataclass
class ClosedLoopRow:
    step: int
    t: float
    y_set: float
    y_m: float
    z: float
    zbar_predicted: int
    u: float
    u_set: float
    q_true: float
    q_hat: float
    mode: str
    overshoot: float
    z_violation: bool
    os_violation: bool
    bound_violation: bool
    rate_violation: bool
    rate_relaxed: bool
    alarm: bool
    mhe_clamped: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "t": self.t,
            "y_set": self.y_set,
            "y_m": self.y_m,
            "z": self.z,
            "zbar_predicted": self.zbar_predicted,
            "u": self.u,
            "u_set": self.u_set,
            "q_true": self.q_true,
            "q_hat": self.q_hat,
            "mode": self.mode,
            "overshoot": self.overshoot,
            "z_violation": int(self.z_violation),
            "os_violation": int(self.os_violation),
            "bound_violation": int(self.bound_violation),
            "rate_violation": int(self.rate_violation),
            "rate_relaxed": int(self.rate_relaxed),
            "alarm": int(self.alarm),
            "mhe_clamped": int(self.mhe_clamped),
        }


@dataclass
class ClosedLoopRecord:
    scenario: str
    rows: List[ClosedLoopRow] = field(default_factory=list)
    timings: List[Dict[str, float]] = field(default_factory=list)  # Wall-clock per step, kept apart
    profiles: List[np.ndarray] = field(default_factory=list)  # Settler aqueous U per step
    aborted_at: Optional[int] = None

    def append(self, row: ClosedLoopRow, profile: np.ndarray, timing: Dict[str, float]):
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError("ClosedLoopRecord times must be strictly increasing")
        self.rows.append(row)
        self.profiles.append(np.asarray(profile, dtype=float).copy())
        self.timings.append(dict(timing))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_dict() for row in self.rows])

    def profiles_frame(self) -> pd.DataFrame:
        if not self.profiles:
            return pd.DataFrame()
        columns = [f"stage_{n}" for n in range(1, len(self.profiles[0]) + 1)]
        frame = pd.DataFrame(np.vstack(self.profiles), columns=columns)
        frame.insert(0, "t", [row.t for row in self.rows])
        return frame

    def timings_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.timings)
        frame.insert(0, "step", [row.step for row in self.rows])
        return frame

    def __len__(self) -> int:
        return len(self.rows)
