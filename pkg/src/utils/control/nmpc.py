"""
Surrogate-based NMPC for the feed flow u.

Each period the swarm searches N_p future moves; every candidate is rolled through the
surrogate with the disturbance frozen at q_hat. Candidates that the classifier expects to
break the raffinate limit, that overshoot, or that move faster than du_max are
infeasible. Only the first move is applied.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from utils.config import IntegratorOptions, NmpcConfig, PlantParams, PsoOptions
from utils.errors import InfeasibleProblemError, InfeasibleTargetError
from utils.logging_utils import MasterLogger
from utils.optim.pso import BoxedProblem, optimize
from utils.plant.dae import solve_u_set
from utils.states import ControlDecision, ControlMode
from utils.surrogate.dataset import ThetaVector
from utils.surrogate.networks import rollout

RATE_TOL = 1e-9


@dataclass(frozen=True)
class CostWeights:
    w_p: float
    w_q: float
    w_r: float
    w_s: float


def resolve_weights(config: NmpcConfig, y_set: float, u_set: float) -> CostWeights:
    """Fills unset weights from the set points (1/y_set for outputs, factor/u_set for inputs)."""
    w_y = 1.0 / y_set
    w_u = config.input_weight_factor / u_set
    return CostWeights(
        w_p=config.w_p if config.w_p is not None else w_y,
        w_q=config.w_q if config.w_q is not None else w_y,
        w_r=config.w_r if config.w_r is not None else w_u,
        w_s=config.w_s if config.w_s is not None else w_u,
    )


def move_box(u_prev: float, N_p: int, u_bounds: Tuple[float, float], du_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """Box of each move reachable from u_prev under the rate bound (j+1 moves of du_max)."""
    u_min, u_max = u_bounds
    reach = du_max * np.arange(1, N_p + 1)
    lower = np.maximum(u_min, u_prev - reach)
    upper = np.minimum(u_max, u_prev + reach)
    return lower, upper


class NmpcProblem:
    """
    Cost and feasibility of candidate move sequences.

    The last batch of rollouts is cached, so the feasibility check and the objective of
    the same swarm share one pass through the surrogate.
    """

    def __init__(
        self,
        history: ThetaVector,
        q_hat: float,
        u_prev: float,
        model,
        weights: CostWeights,
        y_set: float,
        u_set: float,
        y_bound: float,
        du_max: float,
        enforce_zbar: bool = True,
        check_rate: bool = True,
    ):
        if history.N != model.N:
            raise ValueError(f"history holds N={history.N} lags, model expects N={model.N}")
        self.history = history
        self.q_hat = q_hat
        self.u_prev = u_prev
        self.model = model
        self.weights = weights
        self.y_set = y_set
        self.u_set = u_set
        self.y_bound = y_bound
        self.du_max = du_max
        self.enforce_zbar = enforce_zbar
        self.check_rate = check_rate
        self._cache_key: Optional[np.ndarray] = None
        self._cache: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def predict(self, moves: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(y_hat, zbar), each (P, N_p), for a (P, N_p) batch of move sequences."""
        moves = np.atleast_2d(np.asarray(moves, dtype=float))
        if self._cache_key is not None and self._cache_key.shape == moves.shape and np.array_equal(self._cache_key, moves):
            return self._cache
        P, N_p = moves.shape
        u_path = np.hstack([np.broadcast_to(self.history.u_hist[:-1], (P, self.model.N)), moves])
        q_row = np.concatenate([self.history.q_hist[:-1], np.full(N_p, self.q_hat)])
        self._cache = rollout(self.model, self.history.y_hist, u_path, np.broadcast_to(q_row, (P, len(q_row))))
        self._cache_key = moves.copy()
        return self._cache

    def cost(self, moves: np.ndarray) -> np.ndarray:
        moves = np.atleast_2d(np.asarray(moves, dtype=float))
        y_hat, _ = self.predict(moves)
        w = self.weights
        tracking = w.w_p * np.sum((y_hat[:, :-1] - self.y_set) ** 2, axis=1)
        terminal = w.w_q * (y_hat[:, -1] - self.y_set) ** 2
        target = w.w_r * np.sum((moves - self.u_set) ** 2, axis=1)
        previous = np.hstack([np.full((len(moves), 1), self.u_prev), moves[:, :-1]])
        smoothing = w.w_s * np.sum((moves - previous) ** 2, axis=1)
        return tracking + terminal + target + smoothing

    def rate_ok(self, moves: np.ndarray) -> np.ndarray:
        moves = np.atleast_2d(np.asarray(moves, dtype=float))
        previous = np.hstack([np.full((len(moves), 1), self.u_prev), moves[:, :-1]])
        return np.all(np.abs(moves - previous) <= self.du_max + RATE_TOL, axis=1)

    def feasible(self, moves: np.ndarray) -> np.ndarray:
        moves = np.atleast_2d(np.asarray(moves, dtype=float))
        y_hat, zbar = self.predict(moves)
        ok = np.all(y_hat <= self.y_bound, axis=1)
        if self.enforce_zbar:
            ok &= np.all(zbar == 1, axis=1)
        if self.check_rate:
            ok &= self.rate_ok(moves)
        return ok

    def boxed(self, lower: np.ndarray, upper: np.ndarray) -> BoxedProblem:
        return BoxedProblem(
            objective=lambda m: float(self.cost(m)[0]),
            lower=lower,
            upper=upper,
            feasible=lambda m: bool(self.feasible(m)[0]),
            batch_objective=self.cost,
            batch_feasible=self.feasible,
        )


def plan(
    history: ThetaVector,
    q_hat: float,
    u_prev: float,
    config: NmpcConfig,
    model,
    pso_options: Optional[PsoOptions] = None,
    *,
    u_set: float,
    u_bounds: Tuple[float, float],
    du_max: float,
    y_set: Optional[float] = None,
) -> ControlDecision:
    """
    One receding-horizon solve.

    Args:
        history (ThetaVector): y_m(k-N .. k), applied u(k-N .. k-1) and committed q
            estimates (k-N .. k-1); the last u and q entries are placeholders.
        q_hat (float): Current disturbance estimate, frozen over the horizon.
        u_prev (float): Input applied over the last period.
        config (NmpcConfig): Horizon, weights and constraint settings.
        model: Surrogate with `N` and `predict_batch`.
        pso_options (PsoOptions, optional): Overrides config.pso.
        u_set (float): Steady-state input for (y_set, q_hat).
        u_bounds (tuple): (u_min, u_max).
        du_max (float): Largest move per period.
        y_set (float, optional): Overrides config.y_set.

    Returns:
        ControlDecision: First move plus the full planned sequence. rate_relaxed is set
        when the rate bound had to be dropped; alarm is set when even the relaxed problem
        had no feasible point and u_prev is held.
    """
    logger = MasterLogger.get_instance()
    y_set = y_set if y_set is not None else config.y_set
    if y_set is None:
        raise ValueError("plan needs a set point (argument or config.y_set)")
    options = pso_options or config.pso
    u_min, u_max = u_bounds
    y_m = float(history.y_hist[-1])
    # when already above the overshoot bound the output only has to stop rising
    y_bound = max(y_set * (1.0 + config.os_max), y_m)
    weights = resolve_weights(config, y_set, u_set)

    problem = NmpcProblem(
        history, q_hat, u_prev, model, weights, y_set, u_set, y_bound, du_max, config.enforce_zbar, check_rate=True
    )
    lower, upper = move_box(u_prev, config.N_p, u_bounds, du_max)
    rate_relaxed = False
    try:
        result = optimize(problem.boxed(lower, upper), options)
    except InfeasibleProblemError:
        logger.warning(f"NMPC infeasible from u_prev={u_prev:.4g}; relaxing the rate bound")
        rate_relaxed = True
        problem.check_rate = False
        try:
            result = optimize(
                problem.boxed(np.full(config.N_p, u_min), np.full(config.N_p, u_max)), options
            )
        except InfeasibleProblemError:
            logger.error(f"NMPC infeasible even without the rate bound; holding u={u_prev:.4g}")
            held = np.full(config.N_p, float(np.clip(u_prev, u_min, u_max)))
            _, zbar = problem.predict(held)
            return ControlDecision(
                u_applied=float(held[0]),
                u_sequence=held,
                mode=ControlMode.NMPC,
                objective=float(problem.cost(held)[0]),
                u_set=u_set,
                zbar_predicted=int(zbar[0, 0]),
                rate_relaxed=True,
                alarm=True,
            )

    sequence = np.clip(result.best_point, u_min, u_max)
    _, zbar = problem.predict(sequence)
    return ControlDecision(
        u_applied=float(sequence[0]),
        u_sequence=sequence,
        mode=ControlMode.NMPC,
        objective=float(result.best_value),
        u_set=u_set,
        zbar_predicted=int(zbar[0, 0]),
        rate_relaxed=rate_relaxed,
    )


def switching_decision(y_m: float, y_set: float, u_current: float, u_set: float, epsilon: float) -> ControlMode:
    """STEADY_HOLD once u already sits at u_set and y_m is inside the epsilon band."""
    at_target = abs(u_current - u_set) <= 1e-12 * max(1.0, abs(u_set))
    in_band = abs(y_m - y_set) <= epsilon * y_set
    return ControlMode.STEADY_HOLD if at_target and in_band else ControlMode.NMPC


class SurrogateController:
    """
    Target computation, NMPC/steady-hold switching and the NMPC solve for one loop.
    """

    def __init__(
        self,
        model,
        params: PlantParams,
        config: NmpcConfig,
        options: IntegratorOptions = IntegratorOptions(),
        u_set_solver: Optional[Callable[[float, float], float]] = None,
    ):
        self.model = model
        self.params = params
        self.config = config
        self.options = options
        self.u_set_solver = u_set_solver or (lambda y_set, q_hat: solve_u_set(y_set, q_hat, params, options))
        self.mode = ControlMode.NMPC
        self.u_set = float("nan")
        self.target_clamped = False
        self._target_y: Optional[float] = None
        self._target_q: Optional[float] = None
        self.logger = MasterLogger.get_instance()

    def update_target(self, y_set: float, q_hat: float) -> bool:
        """
        Recomputes u_set when y_set changed or q_hat moved by more than q_change_tol.

        Returns:
            bool: True when u_set was recomputed (NMPC is re-enabled in that case).
        """
        if self._target_y is not None and y_set == self._target_y:
            drift = abs(q_hat - self._target_q) / abs(self._target_q)
            if drift <= self.config.q_change_tol:
                return False
        try:
            self.u_set = float(self.u_set_solver(y_set, q_hat))
            self.target_clamped = False
        except InfeasibleTargetError as e:
            self.logger.warning(f"{e}; using u_set={e.nearest_u:.4g}")
            self.u_set = float(e.nearest_u)
            self.target_clamped = True
        self._target_y, self._target_q = y_set, q_hat
        if self.mode is not ControlMode.NMPC:
            self.logger.info(f"Target changed (y_set={y_set:.4g}, q_hat={q_hat:.4g}); NMPC re-enabled")
        self.mode = ControlMode.NMPC
        return True

    def step(self, history: ThetaVector, q_hat: float, u_prev: float, y_set: float) -> ControlDecision:
        """Target update, switching rule, then either the hold input or an NMPC move."""
        changed = self.update_target(y_set, q_hat)
        y_m = float(history.y_hist[-1])
        params = self.params
        if not changed:
            mode = switching_decision(y_m, y_set, u_prev, self.u_set, self.config.epsilon)
            if mode is not self.mode:
                self.logger.info(f"Mode {self.mode.value} -> {mode.value} at y_m={y_m:.5g}")
            self.mode = mode

        if self.mode is ControlMode.STEADY_HOLD:
            return ControlDecision(
                u_applied=self.u_set,
                u_sequence=np.full(self.config.N_p, self.u_set),
                mode=ControlMode.STEADY_HOLD,
                objective=0.0,
                u_set=self.u_set,
                target_clamped=self.target_clamped,
            )

        decision = plan(
            history,
            q_hat,
            u_prev,
            self.config,
            self.model,
            u_set=self.u_set,
            u_bounds=(params.u_min, params.u_max),
            du_max=params.du_max,
            y_set=y_set,
        )
        decision.target_clamped = self.target_clamped
        in_band = abs(y_m - y_set) <= self.config.epsilon * y_set
        near_target = abs(decision.u_applied - self.u_set) <= self.config.u_snap_tol * self.u_set
        reachable = abs(self.u_set - u_prev) <= params.du_max
        if not decision.alarm and in_band and near_target and reachable:
            decision.u_applied = self.u_set
            decision.u_sequence = np.asarray(decision.u_sequence, dtype=float).copy()
            decision.u_sequence[0] = self.u_set
        return decision
