"""
Box-bounded particle swarm optimizer with re-initialisation constraint handling.

Particles that land outside the feasible set are redrawn uniformly inside the box until a
feasible position turns up (or the draw budget runs out); only feasible positions ever
enter the personal and global bests, so the returned point always satisfies the
constraints.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from utils.config import PsoOptions
from utils.errors import InfeasibleProblemError
from utils.logging_utils import MasterLogger


@dataclass
class BoxedProblem:
    """
    objective/feasible act on one point; the optional batch variants act on a (P, D)
    array and are used instead when given.
    """

    objective: Callable[[np.ndarray], float]
    lower: np.ndarray
    upper: np.ndarray
    feasible: Optional[Callable[[np.ndarray], bool]] = None
    batch_objective: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_feasible: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape:
            raise ValueError("Lower and upper bounds must have the same length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("Bounds must be finite")
        if not np.all(self.upper > self.lower):
            raise ValueError("All upper bounds must be greater than the lower bounds")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def is_feasible(self, point: np.ndarray) -> bool:
        if np.any(point < self.lower) or np.any(point > self.upper):
            return False
        return True if self.feasible is None else bool(self.feasible(point))


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: Optional[np.ndarray] = None
    best_value: float = np.inf
    feasible: bool = True
    draws: int = 0


@dataclass
class PsoResult:
    best_point: np.ndarray
    best_value: float
    iterations: int
    history: List[float]
    evaluations: int


def reinitialize_particle(
    particle: Particle,
    bounds: Tuple[np.ndarray, np.ndarray],
    feasibility: Callable[[np.ndarray], bool],
    rng: np.random.Generator,
    max_draws: int = 1000,
    velocity_clamp: float = 0.2,
) -> Particle:
    """
    Redraws a particle uniformly inside the box until it is feasible.

    The velocity is redrawn within the clamp and the personal best is reset. When the
    budget runs out the particle is marked infeasible and stays out of the global best.

    Args:
        particle (Particle): Particle to reset (modified in place).
        bounds (tuple): (lower, upper) arrays.
        feasibility (callable): Predicate on one point.
        rng (np.random.Generator): Source of the draws.
        max_draws (int): Budget of draws.
        velocity_clamp (float): Velocity bound as a fraction of the box width.

    Returns:
        Particle: The same particle, with `draws` holding the number of draws used.
    """
    lower, upper = bounds
    width = upper - lower
    particle.best_position = None
    particle.best_value = np.inf
    particle.feasible = False
    for draw in range(1, max_draws + 1):
        candidate = lower + rng.random(len(lower)) * width
        if feasibility(candidate):
            particle.position = candidate
            particle.feasible = True
            particle.draws = draw
            break
    else:
        particle.position = candidate
        particle.draws = max_draws
    vmax = velocity_clamp * width
    particle.velocity = rng.uniform(-vmax, vmax)
    return particle


def _evaluate(problem: BoxedProblem, positions: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    """Objective and feasibility of every particle, in particle order."""
    n = len(positions)
    inside = np.all((positions >= problem.lower) & (positions <= problem.upper), axis=1)

    if problem.batch_feasible is not None:
        feasible = inside & np.asarray(problem.batch_feasible(positions), dtype=bool)
    else:
        feasible = np.array([inside[i] and problem.is_feasible(positions[i]) for i in range(n)])

    if problem.batch_objective is not None:
        values = np.asarray(problem.batch_objective(positions), dtype=float)
    elif workers > 1:
        values = np.empty(n)
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(problem.objective, positions[i]): i for i in range(n)}
            for future in as_completed(futures):
                values[futures[future]] = future.result()
    else:
        values = np.array([problem.objective(p) for p in positions], dtype=float)
    return values, feasible


def optimize(problem: BoxedProblem, options: PsoOptions = PsoOptions()) -> PsoResult:
    """
    Minimises the objective over the feasible part of the box.

    Args:
        problem (BoxedProblem): Objective, bounds and feasibility predicate.
        options (PsoOptions): Swarm constants, termination and seed.

    Returns:
        PsoResult: Feasible best point, its objective value, iterations run and the
        global-best history (non-increasing).

    Raises:
        InfeasibleProblemError: If no particle can be placed in the feasible set.
    """
    logger = MasterLogger.get_instance()
    rng = np.random.default_rng(options.seed)
    S, D = options.swarm_size, problem.dim
    lower, upper = problem.lower, problem.upper
    vmax = options.velocity_clamp * (upper - lower)

    positions = lower + rng.random((S, D)) * (upper - lower)
    velocities = rng.uniform(-vmax, vmax, size=(S, D))
    best_positions = positions.copy()
    best_values = np.full(S, np.inf)
    evaluations = 0

    def repair(values: np.ndarray, feasible: np.ndarray) -> None:
        """Re-initialises infeasible particles and scores their new positions."""
        for i in np.nonzero(~feasible)[0]:
            particle = reinitialize_particle(
                Particle(positions[i], velocities[i]),
                (lower, upper),
                problem.is_feasible,
                rng,
                options.max_reinit,
                options.velocity_clamp,
            )
            positions[i], velocities[i] = particle.position, particle.velocity
            best_values[i] = np.inf
            if particle.feasible:
                values[i] = problem.objective(particle.position)
                feasible[i] = True

    values, feasible = _evaluate(problem, positions, options.workers)
    evaluations += S
    repair(values, feasible)
    if not feasible.any():
        raise InfeasibleProblemError(
            f"No feasible particle after {options.max_reinit} draws for each of {S} particles"
        )

    improved = feasible & (values < best_values)
    best_positions[improved] = positions[improved]
    best_values[improved] = values[improved]
    g_index = int(np.argmin(best_values))
    g_position, g_value = best_positions[g_index].copy(), float(best_values[g_index])
    history = [g_value]
    stall = 0
    iteration = 0

    for iteration in range(1, options.max_iter + 1):
        r1 = rng.random((S, D))
        r2 = rng.random((S, D))
        velocities = (
            options.inertia * velocities
            + options.c1 * r1 * (best_positions - positions)
            + options.c2 * r2 * (g_position - positions)
        )
        velocities = np.clip(velocities, -vmax, vmax)
        positions = np.clip(positions + velocities, lower, upper)

        values, feasible = _evaluate(problem, positions, options.workers)
        evaluations += S
        repair(values, feasible)

        improved = feasible & (values < best_values)
        best_positions[improved] = positions[improved]
        best_values[improved] = values[improved]

        # ties go to the lowest particle index
        candidate = int(np.argmin(best_values))
        previous = g_value
        if best_values[candidate] < g_value:
            g_position, g_value = best_positions[candidate].copy(), float(best_values[candidate])
        history.append(g_value)

        stall = stall + 1 if previous - g_value < options.stall_tol else 0
        if stall >= options.stall_patience:
            break

    if not np.isfinite(g_value):
        raise InfeasibleProblemError("Swarm never recorded a feasible objective value")
    logger.debug(f"PSO finished: {iteration} iterations, best={g_value:.6e}, evaluations={evaluations}")
    return PsoResult(g_position, g_value, iteration, history, evaluations)
