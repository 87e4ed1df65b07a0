import numpy as np
import pytest

from utils.config import PsoOptions
from utils.errors import InfeasibleProblemError
from utils.optim.pso import BoxedProblem, Particle, optimize, reinitialize_particle


def sphere(point):
    return float(np.sum((point - 0.3) ** 2))


def test_sphere_minimum():
    problem = BoxedProblem(sphere, lower=[-2.0, -2.0, -2.0], upper=[2.0, 2.0, 2.0])
    result = optimize(problem, PsoOptions(swarm_size=30, max_iter=200, seed=1))
    assert np.allclose(result.best_point, 0.3, atol=1e-2)
    assert result.best_value < 1e-4


def test_constrained_minimum_lies_on_the_constraint():
    problem = BoxedProblem(
        lambda p: float(p @ p),
        lower=[-2.0, -2.0],
        upper=[2.0, 2.0],
        feasible=lambda p: p[0] + p[1] >= 1.0,
    )
    result = optimize(problem, PsoOptions(swarm_size=40, max_iter=300, stall_patience=50, seed=2))
    assert result.best_point[0] + result.best_point[1] >= 1.0
    assert np.allclose(result.best_point, [0.5, 0.5], atol=2e-2)
    assert result.best_value == pytest.approx(0.5, abs=1e-3)


def test_same_seed_same_result():
    problem = BoxedProblem(sphere, lower=[-1.0, -1.0], upper=[1.0, 1.0])
    first = optimize(problem, PsoOptions(seed=7))
    second = optimize(problem, PsoOptions(seed=7))
    assert np.array_equal(first.best_point, second.best_point)
    assert first.history == second.history


def test_history_is_non_increasing():
    problem = BoxedProblem(
        lambda p: float(np.sum(p**2 - 10 * np.cos(2 * np.pi * p))),
        lower=[-5.0] * 4,
        upper=[5.0] * 4,
    )
    result = optimize(problem, PsoOptions(seed=3))
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))
    assert result.iterations == len(result.history) - 1


def test_batch_and_threaded_evaluation_match_scalar():
    feasible = lambda p: p[0] >= -0.5  # noqa: E731
    scalar = BoxedProblem(sphere, [-1.0, -1.0], [1.0, 1.0], feasible=feasible)
    batch = BoxedProblem(
        sphere,
        [-1.0, -1.0],
        [1.0, 1.0],
        feasible=feasible,
        batch_objective=lambda P: np.sum((P - 0.3) ** 2, axis=1),
        batch_feasible=lambda P: P[:, 0] >= -0.5,
    )
    reference = optimize(scalar, PsoOptions(seed=4, max_iter=40))
    assert np.allclose(optimize(batch, PsoOptions(seed=4, max_iter=40)).best_point, reference.best_point)
    threaded = optimize(scalar, PsoOptions(seed=4, max_iter=40, workers=4))
    assert np.array_equal(threaded.best_point, reference.best_point)


def test_reinitialization_draws_follow_feasible_fraction():
    rng = np.random.default_rng(0)
    bounds = (np.zeros(2), np.ones(2))
    draws = []
    for _ in range(2000):
        particle = reinitialize_particle(Particle(np.zeros(2), np.zeros(2)), bounds, lambda p: p[0] < 0.1, rng)
        assert particle.feasible and particle.position[0] < 0.1
        assert particle.best_value == np.inf
        draws.append(particle.draws)
    assert np.mean(draws) == pytest.approx(10.0, abs=1.0)


def test_exhausted_draw_budget_marks_particle_infeasible():
    rng = np.random.default_rng(0)
    particle = reinitialize_particle(
        Particle(np.zeros(1), np.zeros(1)), (np.zeros(1), np.ones(1)), lambda p: False, rng, max_draws=25
    )
    assert not particle.feasible
    assert particle.draws == 25


def test_measure_zero_feasible_set_is_infeasible():
    problem = BoxedProblem(sphere, [0.0, 0.0], [1.0, 1.0], feasible=lambda p: p[0] == 0.5)
    with pytest.raises(InfeasibleProblemError):
        optimize(problem, PsoOptions(swarm_size=5, max_reinit=50))


@pytest.mark.parametrize("lower, upper", [([0.0], [0.0]), ([0.0, 0.0], [1.0]), ([0.0], [np.inf])])
def test_bad_boxes_are_rejected(lower, upper):
    with pytest.raises(ValueError):
        BoxedProblem(sphere, lower, upper)
