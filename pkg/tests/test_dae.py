import numpy as np
import pytest

from utils.config import IntegratorOptions
from utils.errors import DomainError, InfeasibleTargetError
from utils.plant.cascade import inventory, wire_flows
from utils.plant.dae import (
    JacobianCache,
    Plant,
    fd_jacobian,
    initial_guess,
    integrate_period,
    reduced_rhs,
    solve_algebraic,
    solve_u_set,
    steady_state,
    steady_y,
)


@pytest.fixture(scope="module")
def nominal_steady(params, options):
    return steady_state(30.0, params.q_nominal, None, params, options)


def test_fd_jacobian_matches_dense_differences(params, options):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 1.0, size=params.n_states)
    flows = wire_flows(params, 30.0, 100.0)
    x_alg = solve_algebraic(x, params)
    J = fd_jacobian(x, x_alg, flows, params, options)
    f0, _ = reduced_rhs(x, flows, params, options, guess=x_alg)
    for column in (0, 17, 40, 77, 127):
        eps = 1e-7 * max(abs(x[column]), 1e-2)
        x_pert = x.copy()
        x_pert[column] += eps
        f_pert, _ = reduced_rhs(x_pert, flows, params, options, guess=x_alg)
        assert np.allclose(J[:, column], (f_pert - f0) / eps, rtol=1e-3, atol=1e-3)


def test_startup_conserves_mass_and_stays_non_negative(params, options):
    # uranium feed switched on into an acid-only cascade
    x = initial_guess(params)
    x_alg = None
    cache = JacobianCache()
    flows = wire_flows(params, 30.0, params.q_nominal)
    for _ in range(8):
        before = inventory(x, flows, params)
        x, x_alg, report = integrate_period(x, 30.0, params.q_nominal, params.T, options, params, x_alg, cache)
        after = inventory(x, flows, params)
        assert np.all(x >= -options.negative_tol)
        for species in ("U", "H"):
            change = after[species] - before[species]
            net = report.inflow[species] - report.outflow[species]
            scale = max(abs(before[species]), report.inflow[species], 1.0)
            assert abs(change - net) / scale < 1e-6


def test_bdf2_agrees_with_implicit_euler(params):
    x = initial_guess(params)
    euler, _, _ = integrate_period(x, 30.0, 100.0, 1.0, IntegratorOptions(dt_internal=0.01), params)
    bdf2, _, _ = integrate_period(x, 30.0, 100.0, 1.0, IntegratorOptions(dt_internal=0.01, method="bdf2"), params)
    assert np.max(np.abs(euler - bdf2)) < 5e-2 * max(np.max(np.abs(euler)), 1.0)


def test_non_positive_flow_is_rejected(params, options):
    with pytest.raises(DomainError):
        integrate_period(initial_guess(params), 0.0, 100.0, params.T, options, params)


def test_steady_state_is_a_fixed_point(params, options, nominal_steady):
    flows = wire_flows(params, 30.0, params.q_nominal)
    f, _ = reduced_rhs(nominal_steady.x, flows, params, options)
    assert np.max(np.abs(f)) < options.steady_tol

    x_next, _, _ = integrate_period(nominal_steady.x, 30.0, params.q_nominal, params.T, options, params)
    assert np.max(np.abs(x_next - nominal_steady.x)) < 1e-7
    assert nominal_steady.is_non_negative()


def test_steady_state_without_uranium_holds_no_uranium(params, options):
    state = steady_state(30.0, params.q_nominal, None, params.without_uranium(), options)
    assert state.y == pytest.approx(0.0, abs=1e-12)
    assert np.max(state.block("H_aq_D")) > 0


def test_plant_measurement_is_seeded(params, nominal_steady):
    first = Plant(params, nominal_steady, noise_std=1e-3, seed=5)
    second = Plant(params, nominal_steady, noise_std=1e-3, seed=5)
    assert [first.measure() for _ in range(3)] == [second.measure() for _ in range(3)]
    assert Plant(params, nominal_steady).measure() == nominal_steady.y


def test_plant_step_advances_time(params, nominal_steady):
    plant = Plant(params, nominal_steady)
    report = plant.step(30.0, params.q_nominal)
    assert plant.t == pytest.approx(params.T)
    assert report.substeps >= 1
    assert plant.profile().shape == (params.n_stages,)


@pytest.mark.slow
def test_solve_u_set_recovers_flow(params, options, nominal_steady):
    u = solve_u_set(nominal_steady.y, params.q_nominal, params, options)
    assert u == pytest.approx(30.0, rel=1e-3)
    y, _ = steady_y(u, params.q_nominal, params, nominal_steady.x, options)
    assert abs(y - nominal_steady.y) <= 1e-6 * nominal_steady.y


@pytest.mark.slow
def test_unreachable_set_point_reports_nearest_bound(params, options):
    with pytest.raises(InfeasibleTargetError) as info:
        solve_u_set(100.0, params.q_nominal, params, options)
    assert params.u_min <= info.value.nearest_u <= params.u_max
    assert info.value.y_range[1] < 100.0


@pytest.mark.slow
@pytest.mark.parametrize("method, order", [("implicit-euler", 1), ("bdf2", 2)])
def test_halving_dt_follows_the_method_order(params, method, order):
    # one hour into a start-up: past the mixer transients, still far from steady
    fine = IntegratorOptions(dt_internal=0.005, newton_tol=1e-11, newton_max_iter=30)
    x0, _, _ = integrate_period(initial_guess(params), 30.0, params.q_nominal, 1.0, fine, params)

    ends = []
    for dt in (0.005, 0.0025, 0.00125):
        options = IntegratorOptions(dt_internal=dt, method=method, newton_tol=1e-11, newton_max_iter=30)
        x, _, report = integrate_period(x0, 30.0, params.q_nominal, 0.1, options, params)
        assert report.halvings == 0
        ends.append(x)
    ratio = np.max(np.abs(ends[0] - ends[1])) / np.max(np.abs(ends[1] - ends[2]))
    assert 0.7 * 2**order <= ratio <= 1.3 * 2**order


@pytest.mark.slow
def test_steady_states_are_fixed_points_over_the_input_box(params, options):
    for q in np.linspace(0.8, 1.2, 5) * params.q_nominal:
        guess = None
        for u in np.linspace(params.u_min, params.u_max, 5):
            state = steady_state(float(u), float(q), guess, params, options)
            guess = state.x
            flows = wire_flows(params, float(u), float(q))
            f, _ = reduced_rhs(state.x, flows, params, options)
            assert np.max(np.abs(f)) < options.steady_tol, (u, q)

            x_next, _, _ = integrate_period(state.x, float(u), float(q), params.T, options, params)
            assert np.max(np.abs(x_next - state.x)) < 1e-6 * max(1.0, np.max(np.abs(state.x))), (u, q)
            assert state.is_non_negative()
