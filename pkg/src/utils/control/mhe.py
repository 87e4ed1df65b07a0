"""
Moving-horizon estimation of the unmeasured fresh solvent flow q.

The decision vector is the N_e most recent disturbance values q(k-N_e .. k-1). Each
candidate is scored by rolling the surrogate forward from measured outputs at the start
of the window and comparing predictions to measurements with geometric forgetting.
The full-state variant, which also estimates the 128 plant states, exists only as a
timing baseline.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from utils.config import IntegratorOptions, MheConfig, PlantParams, PsoOptions
from utils.errors import CascadeError, InfeasibleProblemError
from utils.logging_utils import MasterLogger
from utils.optim.pso import BoxedProblem, optimize
from utils.plant.dae import JacobianCache, integrate_period
from utils.surrogate.networks import rollout


@dataclass
class EstimatorState:
    """
    Time-aligned buffers ending at the current period k.

    y_meas: y_m(k-N-N_e .. k)       (N+N_e+1 values)
    u_applied: u(k-N-N_e .. k-1)    (N+N_e values)
    q_committed: q(k-N-N_e .. k-1)  (N+N_e values, committed estimates)
    """

    N: int
    N_e: int
    forgetting: float
    y_meas: List[float] = field(default_factory=list)
    u_applied: List[float] = field(default_factory=list)
    q_committed: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.forgetting < 1:
            raise ValueError("forgetting factor must lie in (0, 1)")
        if self.N_e < 1:
            raise ValueError("N_e must be >= 1")

    @property
    def window(self) -> int:
        return self.N + self.N_e

    def prime(self, y0: float, u0: float, q0: float) -> None:
        """Fills the buffers as if the plant had rested at (y0, u0, q0)."""
        self.y_meas = [float(y0)] * (self.window + 1)
        self.u_applied = [float(u0)] * self.window
        self.q_committed = [float(q0)] * self.window

    def push(self, y_m: float, u_prev: float, q_guess: float) -> None:
        """Appends the new measurement and the input applied over the last period."""
        self.y_meas = (self.y_meas + [float(y_m)])[-(self.window + 1) :]
        self.u_applied = (self.u_applied + [float(u_prev)])[-self.window :]
        self.q_committed = (self.q_committed + [float(q_guess)])[-self.window :]

    def is_full(self) -> bool:
        return len(self.y_meas) == self.window + 1 and len(self.u_applied) == self.window

    def weights(self) -> np.ndarray:
        """lambda^(k-j) for j = k-N_e+1 .. k (oldest residual weighted least)."""
        return self.forgetting ** np.arange(self.N_e - 1, -1, -1)


def mhe_objective(state: EstimatorState, model, q_window: np.ndarray) -> np.ndarray:
    """
    Forgetting-weighted squared output error for one or many candidate windows.

    Args:
        state (EstimatorState): Full buffers.
        model: Surrogate with `N` and `predict_batch`.
        q_window (np.ndarray): (N_e,) or (P, N_e) candidates for q(k-N_e .. k-1).

    Returns:
        np.ndarray: Objective per candidate (scalar array for a single candidate).
    """
    q_window = np.atleast_2d(np.asarray(q_window, dtype=float))
    N, N_e = state.N, state.N_e
    P = len(q_window)
    y_seed = np.asarray(state.y_meas[: N + 1])
    u_path = np.asarray(state.u_applied)
    q_old = np.asarray(state.q_committed[:N])
    q_path = np.hstack([np.broadcast_to(q_old, (P, N)), q_window])
    y_hat, _ = rollout(model, y_seed, np.broadcast_to(u_path, (P, N + N_e)), q_path)
    residuals = y_hat - np.asarray(state.y_meas[N + 1 :])
    return (residuals**2) @ state.weights()


def estimate(
    state: EstimatorState,
    model,
    pso_options: PsoOptions,
    q_bounds: Tuple[float, float],
) -> Tuple[np.ndarray, bool]:
    """
    Best disturbance window q(k-N_e .. k-1) for the buffered measurements.

    Returns:
        tuple: (estimates, clamped). clamped is set when the optimizer failed and the
        previous estimates were clamped into the box instead, or when the newest estimate
        sits on a bound of the search box.
    """
    if not state.is_full():
        raise ValueError("Estimator buffers are not full; prime() them first")
    logger = MasterLogger.get_instance()
    low, high = q_bounds
    problem = BoxedProblem(
        objective=lambda q: float(mhe_objective(state, model, q)[0]),
        lower=np.full(state.N_e, low),
        upper=np.full(state.N_e, high),
        batch_objective=lambda Q: mhe_objective(state, model, Q),
    )
    try:
        result = optimize(problem, pso_options)
    except InfeasibleProblemError as e:
        logger.warning(f"MHE optimizer failed ({e}); clamping previous estimates")
        previous = np.clip(np.asarray(state.q_committed[-state.N_e :]), low, high)
        return previous, True

    estimates = result.best_point
    span = high - low
    clamped = bool(estimates[-1] <= low + 1e-6 * span or estimates[-1] >= high - 1e-6 * span)
    if clamped:
        logger.warning(f"MHE estimate {estimates[-1]:.4g} on the search bound [{low:.4g}, {high:.4g}]")
    return estimates, clamped


class MovingHorizonEstimator:
    """
    Owns the estimator buffers: push a measurement each period, estimate, commit.
    """

    def __init__(self, model, config: MheConfig, q_nominal: float):
        self.model = model
        self.config = config
        self.q_nominal = q_nominal
        self.q_bounds = (config.q_box[0] * q_nominal, config.q_box[1] * q_nominal)
        self.state = EstimatorState(model.N, config.N_e, config.forgetting)
        self.q_hat = q_nominal
        self.clamped = False
        self.last_objective = float("nan")

    def prime(self, y0: float, u0: float) -> None:
        self.state.prime(y0, u0, self.q_nominal)

    def update(self, y_m: float, u_prev: float) -> float:
        """
        Adds y_m(k) and u(k-1), re-estimates the window and returns q_hat = q(k-1|k).
        """
        self.state.push(y_m, u_prev, self.q_hat)
        estimates, self.clamped = estimate(self.state, self.model, self.config.pso, self.q_bounds)
        self.state.q_committed[-self.config.N_e :] = [float(v) for v in estimates]
        self.last_objective = float(mhe_objective(self.state, self.model, estimates)[0])
        self.q_hat = float(estimates[-1])
        return self.q_hat

    @property
    def committed(self) -> List[float]:
        return list(self.state.q_committed)


class FullStateMhe:
    """
    Baseline estimator over the plant model itself: the decision vector holds the 128
    states at the start of the window (as relative deviations from a reference state)
    plus the N_e disturbance values, and every candidate is scored by DAE rollouts.
    """

    def __init__(
        self,
        params: PlantParams,
        config: MheConfig,
        x_reference: np.ndarray,
        options: IntegratorOptions = IntegratorOptions(),
        state_spread: float = 0.1,
    ):
        self.params = params
        self.config = config
        self.x_reference = np.asarray(x_reference, dtype=float)
        self.options = options
        self.state_spread = state_spread

    @property
    def n_decisions(self) -> int:
        return len(self.x_reference) + self.config.N_e

    def objective(self, decision: np.ndarray, y_meas: np.ndarray, u_applied: np.ndarray) -> float:
        n_x = len(self.x_reference)
        x = np.maximum(self.x_reference * (1.0 + decision[:n_x]), 0.0)
        q_window = decision[n_x:]
        weights = self.config.forgetting ** np.arange(self.config.N_e - 1, -1, -1)
        cache = JacobianCache()
        x_alg = None
        total = 0.0
        try:
            for j in range(self.config.N_e):
                x, x_alg, _ = integrate_period(
                    x, float(u_applied[j]), float(q_window[j]), self.params.T, self.options, self.params, x_alg, cache
                )
                y = x[2 * self.params.n_stages + self.params.feed_stage]
                total += weights[j] * (y - y_meas[j + 1]) ** 2
        except CascadeError:
            return np.inf
        return total

    def estimate(self, y_meas: np.ndarray, u_applied: np.ndarray, pso_options: Optional[PsoOptions] = None):
        """
        Args:
            y_meas (np.ndarray): y_m(k-N_e .. k), N_e+1 values.
            u_applied (np.ndarray): u(k-N_e .. k-1), N_e values.

        Returns:
            PsoResult: Optimizer result over the (128 + N_e)-dimensional decision vector.
        """
        n_x = len(self.x_reference)
        q_nominal = self.params.q_nominal
        lower = np.concatenate(
            [np.full(n_x, -self.state_spread), np.full(self.config.N_e, self.config.q_box[0] * q_nominal)]
        )
        upper = np.concatenate(
            [np.full(n_x, self.state_spread), np.full(self.config.N_e, self.config.q_box[1] * q_nominal)]
        )
        problem = BoxedProblem(
            objective=lambda d: self.objective(d, np.asarray(y_meas), np.asarray(u_applied)),
            lower=lower,
            upper=upper,
        )
        return optimize(problem, pso_options or self.config.pso)
