"""
Integration of the semi-explicit index-1 cascade DAE, steady states and set-point targets.

The algebraic interface concentrations are eliminated stage by stage, so the
integrator works on the reduced system dx/dt = f(x, x_alg(x)). Implicit Euler (or BDF2)
sub-steps use a modified Newton iteration with one dense LU per sub-step size; the
Jacobian comes from forward differences compressed by a stage colouring.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from utils.config import IntegratorOptions, PlantParams
from utils.constants import N_BLOCKS
from utils.errors import (
    AlgebraicSolveError,
    DomainError,
    InfeasibleTargetError,
    IntegrationError,
    SteadyStateError,
)
from utils.logging_utils import MasterLogger
from utils.plant.cascade import (
    StageFlows,
    _residual_and_jacobian,
    boundary_fluxes,
    mass_balance_rhs,
    wire_flows,
)
from utils.states import PlantState

DEFAULT_OPTIONS = IntegratorOptions()


def _solve_interface(x: np.ndarray, params: PlantParams, options: IntegratorOptions, guess=None):
    """Vectorized damped 2x2 Newton over all stages; returns (x_alg, iterations)."""
    n = params.n_stages
    blocks = np.maximum(x.reshape(N_BLOCKS, n), 0.0)
    U_aq_M, U_og_M, H_aq_M, H_og_M = blocks[0], blocks[1], blocks[4], blocks[5]
    K = (params.K_U, params.K_H, params.TBP_total)

    if guess is None:
        U_star, H_star = U_aq_M.copy(), H_aq_M.copy()
    else:
        U_star, H_star = (np.maximum(part, 0.0) for part in guess.reshape(2, n))

    g_U, g_H, j11, j12, j21, j22 = _residual_and_jacobian(U_aq_M, U_og_M, H_aq_M, H_og_M, U_star, H_star, *K)
    norm = np.maximum(np.abs(g_U), np.abs(g_H))
    polished = False
    for iteration in range(1, options.alg_max_iter + 1):
        if norm.max() < options.alg_tol:
            if polished:
                return np.concatenate([U_star, H_star]), iteration
            # one more Newton step takes the roots to rounding level
            polished = True

        det = j11 * j22 - j12 * j21
        dU = (-g_U * j22 + g_H * j12) / det
        dH = (-g_H * j11 + g_U * j21) / det

        step = np.ones(n)
        for _ in range(20):
            U_try = np.maximum(U_star + step * dU, 0.0)
            H_try = np.maximum(H_star + step * dH, 0.0)
            trial = _residual_and_jacobian(U_aq_M, U_og_M, H_aq_M, H_og_M, U_try, H_try, *K)
            trial_norm = np.maximum(np.abs(trial[0]), np.abs(trial[1]))
            worse = (trial_norm > norm) & (trial_norm > options.alg_tol)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        U_star, H_star = U_try, H_try
        g_U, g_H, j11, j12, j21, j22 = trial
        norm = trial_norm

    if norm.max() < options.alg_tol:
        return np.concatenate([U_star, H_star]), options.alg_max_iter
    worst = int(np.argmax(norm))
    raise AlgebraicSolveError(stage=worst + 1, residual=float(norm[worst]), iterations=options.alg_max_iter)


def solve_algebraic(
    x: np.ndarray,
    params: PlantParams,
    options: IntegratorOptions = DEFAULT_OPTIONS,
    guess: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Solves the interface equilibrium of every stage for the current concentrations.

    Args:
        x (np.ndarray): Differential state (non-negative).
        params (PlantParams): Plant parameters.
        options (IntegratorOptions): Tolerance and iteration cap.
        guess (np.ndarray, optional): Warm start (previous x_alg).

    Returns:
        np.ndarray: x_alg = (U_star per stage, H_star per stage).

    Raises:
        DomainError: If x holds negative entries beyond the clipping tolerance.
        AlgebraicSolveError: If a stage does not converge.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < -options.negative_tol):
        raise DomainError("solve_algebraic needs a non-negative state")
    x_alg, _ = _solve_interface(x, params, options, guess)
    return x_alg


def reduced_rhs(
    x: np.ndarray,
    flows: StageFlows,
    params: PlantParams,
    options: IntegratorOptions = DEFAULT_OPTIONS,
    guess: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """f(x) with the algebraic states eliminated; returns (dx/dt, x_alg)."""
    x_alg, _ = _solve_interface(x, params, options, guess)
    return mass_balance_rhs(x, x_alg, flows, params), x_alg


def fd_jacobian(
    x: np.ndarray,
    x_alg: np.ndarray,
    flows: StageFlows,
    params: PlantParams,
    options: IntegratorOptions = DEFAULT_OPTIONS,
    f0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Dense Jacobian of the reduced right-hand side by compressed forward differences.

    A column at stage j only touches rows of stages j-1, j, j+1, so columns of one block
    whose stages agree modulo 3 are perturbed together: 3 * 8 evaluations in total.
    """
    n = params.n_stages
    size = N_BLOCKS * n
    if f0 is None:
        f0 = mass_balance_rhs(x, x_alg, flows, params)
    J = np.zeros((size, size))
    stage_of_row = np.tile(np.arange(n), N_BLOCKS)
    eps = np.sqrt(np.finfo(float).eps) * np.maximum(np.abs(x), 1e-2)

    for block in range(N_BLOCKS):
        for offset in range(3):
            stages = np.arange(offset, n, 3)
            columns = block * n + stages
            x_pert = x.copy()
            x_pert[columns] += eps[columns]
            f_pert, _ = reduced_rhs(x_pert, flows, params, options, guess=x_alg)
            df = f_pert - f0
            for stage, column in zip(stages, columns):
                rows = np.nonzero(np.abs(stage_of_row - stage) <= 1)[0]
                J[rows, column] = df[rows] / eps[column]
    return J


@dataclass
class StepReport:
    substeps: int = 0
    halvings: int = 0
    newton_iterations: int = 0
    jacobian_evaluations: int = 0
    # mol crossing the boundary over the period, right-endpoint quadrature per sub-step
    inflow: Dict[str, float] = field(default_factory=lambda: {"U": 0.0, "H": 0.0})
    outflow: Dict[str, float] = field(default_factory=lambda: {"U": 0.0, "H": 0.0})


@dataclass
class JacobianCache:
    """Jacobian reused across sub-steps and periods while the inputs stay put."""

    J: Optional[np.ndarray] = None
    u: float = float("nan")
    q: float = float("nan")

    def matches(self, u: float, q: float) -> bool:
        return self.J is not None and self.u == u and self.q == q


def _newton(
    base: np.ndarray,
    gamma_h: float,
    x_start: np.ndarray,
    x_alg: np.ndarray,
    flows: StageFlows,
    params: PlantParams,
    options: IntegratorOptions,
    cache: JacobianCache,
    report: StepReport,
):
    """Solves x - base - gamma_h * f(x) = 0; returns (converged, x, x_alg)."""
    size = len(x_start)
    x = x_start.copy()
    refreshed = False
    lu = lu_factor(np.eye(size) - gamma_h * cache.J)
    previous = np.inf

    for iteration in range(options.newton_max_iter):
        try:
            f, x_alg = reduced_rhs(x, flows, params, options, guess=x_alg)
        except AlgebraicSolveError:
            return False, x, x_alg
        report.newton_iterations += 1
        G = x - base - gamma_h * f
        norm = np.abs(G).max()
        if not np.isfinite(norm):
            return False, x, x_alg
        if norm <= options.newton_tol:
            return True, x, x_alg

        slow = norm > 0.5 * previous
        if (slow or iteration == options.newton_max_iter // 2) and not refreshed:
            cache.J = fd_jacobian(x, x_alg, flows, params, options, f0=f)
            report.jacobian_evaluations += 1
            lu = lu_factor(np.eye(size) - gamma_h * cache.J)
            refreshed = True
        previous = norm
        x = x + lu_solve(lu, -G)

    return False, x, x_alg


def integrate_period(
    x: np.ndarray,
    u: float,
    q: float,
    T: float,
    options: IntegratorOptions,
    params: PlantParams,
    x_alg: Optional[np.ndarray] = None,
    cache: Optional[JacobianCache] = None,
) -> Tuple[np.ndarray, np.ndarray, StepReport]:
    """
    Advances the cascade over one control period with inputs held constant.

    Args:
        x (np.ndarray): State at the start of the period.
        u (float): Feed flow over the period (L/h).
        q (float): Fresh solvent flow over the period (L/h).
        T (float): Period length (h).
        options (IntegratorOptions): Sub-step, Newton and clipping settings.
        params (PlantParams): Plant parameters.
        x_alg (np.ndarray, optional): Warm start for the algebraic states.
        cache (JacobianCache, optional): Jacobian carried across calls.

    Returns:
        tuple: (x_next, x_alg_next, StepReport).

    Raises:
        IntegrationError: If a sub-step fails even after the allowed dt halvings.
    """
    logger = MasterLogger.get_instance()
    flows = wire_flows(params, u, q)
    cache = cache if cache is not None else JacobianCache()
    report = StepReport()

    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    x_alg = solve_algebraic(x, params, options, guess=x_alg)
    if not cache.matches(u, q):
        cache.J = fd_jacobian(x, x_alg, flows, params, options)
        cache.u, cache.q = u, q
        report.jacobian_evaluations += 1

    t = 0.0
    dt = min(options.dt_internal, T)
    x_prev: Optional[np.ndarray] = None
    h_prev = 0.0
    while T - t > 1e-12 * T:
        h = min(dt, T - t)
        use_bdf2 = options.method == "bdf2" and x_prev is not None and abs(h - h_prev) < 1e-14
        if use_bdf2:
            base, gamma_h = (4.0 * x - x_prev) / 3.0, 2.0 * h / 3.0
        else:
            base, gamma_h = x, h

        converged, x_new, x_alg_new = _newton(base, gamma_h, x, x_alg, flows, params, options, cache, report)
        if converged and np.any(x_new < -options.negative_tol):
            converged = False

        if not converged:
            report.halvings += 1
            if report.halvings > options.max_halvings:
                raise IntegrationError(
                    f"Implicit sub-step failed at t={t:.4f} h with dt={h:.3e} h after "
                    f"{report.halvings - 1} halvings (u={u:.4g}, q={q:.4g})"
                )
            logger.warning(f"Newton failed at t={t:.4f} h, halving dt to {dt / 2:.3e} h")
            dt /= 2.0
            cache.J = fd_jacobian(x, x_alg, flows, params, options)
            report.jacobian_evaluations += 1
            x_prev = None
            continue

        x_new = np.maximum(x_new, 0.0)
        for species, (inflow, outflow) in boundary_fluxes(x_new, flows, params).items():
            report.inflow[species] += h * inflow
            report.outflow[species] += h * outflow
        x_prev, x, x_alg, h_prev = x, x_new, x_alg_new, h
        t += h
        report.substeps += 1

    x_alg = solve_algebraic(x, params, options, guess=x_alg)
    return x, x_alg, report


def step(
    x: np.ndarray,
    u: float,
    q: float,
    T: float,
    options: IntegratorOptions,
    params: PlantParams,
) -> np.ndarray:
    """One control period of the plant; returns the next differential state."""
    x_next, _, _ = integrate_period(x, u, q, T, options, params)
    return x_next


def initial_guess(params: PlantParams) -> np.ndarray:
    """Uranium-free cascade filled with scrub acid, organic empty."""
    n = params.n_stages
    blocks = np.zeros((N_BLOCKS, n))
    blocks[4] = params.H_aq_E
    blocks[6] = params.H_aq_E
    return blocks.reshape(-1)


def steady_state(
    u: float,
    q: float,
    x_guess: Optional[np.ndarray],
    params: PlantParams,
    options: IntegratorOptions = DEFAULT_OPTIONS,
) -> PlantState:
    """
    Steady state of the cascade for constant inputs.

    Pseudo-transient continuation on f(x) = 0 with a step length that grows as the
    residual falls; if it stalls, the plant is integrated until it stops moving.

    Args:
        u (float): Feed flow (L/h).
        q (float): Fresh solvent flow (L/h).
        x_guess (np.ndarray | None): Starting state; None uses an acid-filled cascade.
        params (PlantParams): Plant parameters.
        options (IntegratorOptions): steady_tol, steady_max_iter and the fallback horizon.

    Returns:
        PlantState: State with ||dx/dt||_inf below steady_tol.

    Raises:
        SteadyStateError: If neither strategy converges.
    """
    logger = MasterLogger.get_instance()
    flows = wire_flows(params, u, q)
    x = initial_guess(params) if x_guess is None else np.maximum(np.asarray(x_guess, dtype=float), 0.0)
    size = len(x)

    try:
        f, x_alg = reduced_rhs(x, flows, params, options)
        norm = np.abs(f).max()
        tau = 0.01
        J = None
        for _ in range(options.steady_max_iter):
            if norm < options.steady_tol:
                return PlantState(x, x_alg, params.n_stages, params.feed_stage)
            if J is None:
                J = fd_jacobian(x, x_alg, flows, params, options, f0=f)
            delta = np.linalg.solve(np.eye(size) / tau - J, f)
            x_try = np.maximum(x + delta, 0.0)
            f_try, x_alg_try = reduced_rhs(x_try, flows, params, options, guess=x_alg)
            norm_try = np.abs(f_try).max()
            if not np.isfinite(norm_try) or norm_try > 10.0 * norm:
                tau *= 0.25
                continue
            tau = min(tau * max(norm / max(norm_try, 1e-300), 0.5), 1e12)
            x, f, x_alg, norm = x_try, f_try, x_alg_try, norm_try
            J = None
        if norm < options.steady_tol:
            return PlantState(x, x_alg, params.n_stages, params.feed_stage)
        logger.warning(f"Continuation stalled at |f|={norm:.3e} (u={u:.4g}, q={q:.4g}); integrating instead")
    except (AlgebraicSolveError, np.linalg.LinAlgError) as e:
        logger.warning(f"Continuation failed ({e}); integrating instead")
        x_alg = None

    # fallback: integrate until the state stops moving
    cache = JacobianCache()
    elapsed = 0.0
    period = 5.0
    while elapsed < options.steady_fallback_hours:
        x, x_alg, _ = integrate_period(x, u, q, period, options, params, x_alg=x_alg, cache=cache)
        elapsed += period
        f, x_alg = reduced_rhs(x, flows, params, options, guess=x_alg)
        if np.abs(f).max() < options.steady_tol:
            return PlantState(x, x_alg, params.n_stages, params.feed_stage)
    raise SteadyStateError(
        f"No steady state within {options.steady_fallback_hours} h of integration (u={u:.4g}, q={q:.4g})"
    )


def steady_y(
    u: float,
    q: float,
    params: PlantParams,
    x_guess: Optional[np.ndarray] = None,
    options: IntegratorOptions = DEFAULT_OPTIONS,
) -> Tuple[float, PlantState]:
    state = steady_state(u, q, x_guess, params, options)
    return state.y, state


def solve_u_set(
    y_set: float,
    q_hat: float,
    params: PlantParams,
    options: IntegratorOptions = DEFAULT_OPTIONS,
    x_guess: Optional[np.ndarray] = None,
    n_scan: int = 9,
) -> float:
    """
    Feed flow whose steady state puts y at y_set for solvent flow q_hat.

    A coarse continuation scan over [u_min, u_max] brackets the smallest flow reaching
    y_set, then Brent's method refines it to |y - y_set| < 1e-6 * y_set.

    Raises:
        InfeasibleTargetError: If y_set lies outside the steady-state range of y.
    """
    grid = np.linspace(params.u_min, params.u_max, n_scan)
    guess = x_guess
    ys, states = [], []
    for u in grid:
        y, state = steady_y(u, q_hat, params, guess, options)
        ys.append(y)
        states.append(state)
        guess = state.x
        if y >= y_set:
            break

    tol = 1e-6 * abs(y_set)
    if abs(ys[0] - y_set) <= tol:
        return float(grid[0])
    if ys[0] > y_set:
        raise InfeasibleTargetError(y_set, float(params.u_min), (ys[0], max(ys)))
    if ys[-1] < y_set:
        raise InfeasibleTargetError(y_set, float(grid[int(np.argmax(ys))]), (ys[0], max(ys)))

    hi = len(ys) - 1
    lo_state = states[hi - 1]
    warm = {"x": lo_state.x}

    def residual(u: float) -> float:
        y, state = steady_y(u, q_hat, params, warm["x"], options)
        warm["x"] = state.x
        return y - y_set

    return float(brentq(residual, grid[hi - 1], grid[hi], xtol=1e-10, rtol=1e-12, maxiter=100))


class Plant:
    """
    The simulated process: owns its state and answers only through measurements.
    """

    def __init__(
        self,
        params: PlantParams,
        x0: PlantState,
        options: IntegratorOptions = DEFAULT_OPTIONS,
        noise_std: float = 0.0,
        seed: int = 0,
    ):
        self.params = params
        self.options = options
        self.state = x0.copy()
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self._cache = JacobianCache()
        self.last_report: Optional[StepReport] = None

    def step(self, u: float, q: float) -> StepReport:
        x, x_alg, report = integrate_period(
            self.state.x, u, q, self.params.T, self.options, self.params, x_alg=self.state.x_alg, cache=self._cache
        )
        self.state = PlantState(x, x_alg, self.params.n_stages, self.params.feed_stage)
        self.t += self.params.T
        self.last_report = report
        return report

    def measure(self) -> float:
        """Measured y, with additive Gaussian noise when configured."""
        if self.noise_std > 0:
            return self.state.y + float(self.rng.normal(0.0, self.noise_std))
        return self.state.y

    @property
    def z(self) -> float:
        return self.state.z

    def profile(self) -> np.ndarray:
        return self.state.settler_aqueous_uranium
