import dataclasses

import numpy as np
import pytest
from scipy.optimize import brentq

from utils.constants import N_BLOCKS
from utils.errors import DomainError
from utils.plant.cascade import (
    boundary_fluxes,
    holdup_weights,
    interface_equilibrium_residual,
    mass_balance_rhs,
    tbp_free,
    uranium_edge,
    wire_flows,
)
from utils.plant.dae import initial_guess, solve_algebraic
from utils.states import PlantState


def random_state(params, rng, low=0.05, high=1.5):
    return rng.uniform(low, high, size=N_BLOCKS * params.n_stages)


def bisection_oracle(conc, params):
    """Nested Brent solve of the two interface residuals of a single stage."""
    H_hi = conc["H_aq_M"] + 2.0 * conc["H_og_M"]
    U_hi = conc["U_aq_M"] + 2.0 * conc["U_og_M"]

    def H_of(U):
        return brentq(lambda H: interface_equilibrium_residual(conc, (U, H), params)[1], 0.0, H_hi, xtol=1e-14)

    U = brentq(
        lambda U: interface_equilibrium_residual(conc, (U, H_of(U)), params)[0], 0.0, U_hi, xtol=1e-14
    )
    return U, H_of(U)


def test_tbp_free_without_solutes_is_total(params):
    assert tbp_free(0.0, 0.0, params) == pytest.approx(params.TBP_total)


def test_tbp_free_rejects_negative(params):
    with pytest.raises(DomainError):
        tbp_free(-0.1, 1.0, params)


def test_tbp_balance_closes(params):
    rng = np.random.default_rng(3)
    U = rng.uniform(0, 2, 100)
    H = rng.uniform(0, 4, 100)
    free = tbp_free(U, H, params)
    nitrate = 2 * U + H
    bound = 2 * params.K_U * U * nitrate**2 * free**2 + params.K_H * H * nitrate * free
    assert np.all(free > 0)
    assert np.max(np.abs(free + bound - params.TBP_total)) < 1e-10


def test_interface_solution_matches_oracle(params):
    rng = np.random.default_rng(0)
    n = params.n_stages
    for _ in range(100 // n + 1):
        x = random_state(params, rng)
        x_alg = solve_algebraic(x, params)
        blocks = x.reshape(N_BLOCKS, n)
        for stage in range(n):
            conc = {
                "U_aq_M": blocks[0, stage],
                "U_og_M": blocks[1, stage],
                "H_aq_M": blocks[4, stage],
                "H_og_M": blocks[5, stage],
            }
            U, H = bisection_oracle(conc, params)
            assert x_alg[stage] == pytest.approx(U, abs=1e-8)
            assert x_alg[n + stage] == pytest.approx(H, abs=1e-8)


def test_interface_residual_vanishes_at_solution(params):
    rng = np.random.default_rng(1)
    x = random_state(params, rng)
    n = params.n_stages
    x_alg = solve_algebraic(x, params)
    blocks = x.reshape(N_BLOCKS, n)
    conc = {"U_aq_M": blocks[0], "U_og_M": blocks[1], "H_aq_M": blocks[4], "H_og_M": blocks[5]}
    g_U, g_H = interface_equilibrium_residual(conc, (x_alg[:n], x_alg[n:]), params)
    assert np.max(np.abs(g_U)) < 1e-12
    assert np.max(np.abs(g_H)) < 1e-12


def test_wire_flows_split(params):
    flows = wire_flows(params, 30.0, 100.0)
    f = params.feed_stage
    assert np.allclose(flows.A[:f], params.A_E + 30.0)
    assert np.allclose(flows.A[f:], params.A_E)
    assert np.allclose(flows.O, 100.0)
    assert np.allclose(flows.V_mix + flows.W_mix, params.V_mix_total)


@pytest.mark.parametrize("u, q", [(0.0, 100.0), (30.0, -1.0), (float("nan"), 100.0)])
def test_wire_flows_rejects_bad_flows(params, u, q):
    with pytest.raises(DomainError):
        wire_flows(params, u, q)


def test_inlet_boundaries(params):
    rng = np.random.default_rng(2)
    x = random_state(params, rng)
    flows = wire_flows(params, 30.0, 100.0)
    inlets = flows.inlet_concentrations(x)
    assert inlets[0, -1] == 0.0
    assert inlets[2, -1] == params.H_aq_E
    assert inlets[1, 0] == 0.0 and inlets[3, 0] == 0.0

    n, f = params.n_stages, params.feed_stage
    U_aq_D = x.reshape(N_BLOCKS, n)[2]
    expected = (30.0 * params.U_aq_F + params.A_E * U_aq_D[f]) / (30.0 + params.A_E)
    assert inlets[0, f - 1] == pytest.approx(expected)


def test_zero_mixer_volume_is_domain_error(params):
    flows = wire_flows(params, 30.0, 100.0)
    broken = dataclasses.replace(flows, V_mix=np.zeros(params.n_stages))
    x = initial_guess(params)
    with pytest.raises(DomainError):
        mass_balance_rhs(x, solve_algebraic(x, params), broken, params)


def test_rhs_conserves_each_species(params):
    rng = np.random.default_rng(4)
    x = random_state(params, rng)
    flows = wire_flows(params, 42.0, 95.0)
    f = mass_balance_rhs(x, solve_algebraic(x, params), flows, params)
    weights = holdup_weights(flows, params)
    half = len(x) // 2
    fluxes = boundary_fluxes(x, flows, params)
    for species, part in (("U", slice(0, half)), ("H", slice(half, None))):
        inflow, outflow = fluxes[species]
        assert np.dot(weights[part], f[part]) == pytest.approx(inflow - outflow, rel=1e-10, abs=1e-10)


def test_uranium_edge():
    profile = np.array([0.0, 0.01, 0.1, 0.4, 0.9, 1.0, 1.0])
    assert uranium_edge(profile) == 5
    assert uranium_edge(profile, fraction=0.05) == 3
    assert uranium_edge(np.zeros(5)) == 5


def test_plant_state_named_views(params):
    n = params.n_stages
    x = np.arange(N_BLOCKS * n, dtype=float)
    state = PlantState(x, 1000.0 + np.arange(2 * n), n, params.feed_stage)
    assert state.block("U_aq_D")[0] == 2 * n
    stage = state.stage(params.feed_stage + 1)
    assert stage["U_aq_D"] == state.y == x[2 * n + params.feed_stage]
    assert stage["U_star"] == 1000.0 + params.feed_stage
    assert stage["H_star"] == 1000.0 + n + params.feed_stage
    assert state.stage(1)["U_aq_D"] == state.z
    with pytest.raises(IndexError):
        state.stage(0)
    with pytest.raises(IndexError):
        state.stage(n + 1)
