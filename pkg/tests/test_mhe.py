import time

import numpy as np
import pytest

from conftest import ToyModel, toy_dataset
from utils.config import MheConfig, PsoOptions, TrainingConfig
from utils.control.mhe import (
    EstimatorState,
    FullStateMhe,
    MovingHorizonEstimator,
    estimate,
    mhe_objective,
)
from utils.plant.dae import Plant, steady_state
from utils.surrogate.training import fit_surrogate

PRECISE = PsoOptions(swarm_size=20, max_iter=150, stall_tol=1e-14, stall_patience=30, seed=5)


def sensitive_model():
    # stronger q coupling than the default toy so the optimum is sharp
    return ToyModel(N=2, c=-0.05, d=6.0)


def simulate(model, y0, u, q_seq):
    """Toy plant outputs y(1..K) for q(0..K-1)."""
    y, outputs = y0, []
    for q in q_seq:
        y = model.a * y + model.b * u + model.c * q + model.d
        outputs.append(y)
    return outputs


def test_weights_favour_recent_residuals():
    state = EstimatorState(N=2, N_e=3, forgetting=0.5)
    assert np.allclose(state.weights(), [0.25, 0.5, 1.0])


@pytest.mark.parametrize("forgetting, N_e", [(0.0, 3), (1.0, 3), (0.9, 0)])
def test_state_validation(forgetting, N_e):
    with pytest.raises(ValueError):
        EstimatorState(N=2, N_e=N_e, forgetting=forgetting)


def test_buffers_keep_their_lengths():
    state = EstimatorState(N=2, N_e=3, forgetting=0.9)
    assert not state.is_full()
    state.prime(1.0, 30.0, 100.0)
    for k in range(10):
        state.push(1.0 + k, 30.0, 100.0)
    assert len(state.y_meas) == 6
    assert len(state.u_applied) == len(state.q_committed) == 5
    assert state.y_meas[-1] == 10.0
    assert state.is_full()


def test_objective_matches_hand_computation(toy_model):
    state = EstimatorState(N=2, N_e=2, forgetting=0.5)
    state.prime(1.0, 30.0, 100.0)
    state.y_meas = [1.0, 1.0, 1.0, 2.0, 3.0]

    q1, q2 = 90.0, 110.0
    m = toy_model
    y1 = m.a * 1.0 + m.b * 30.0 + m.c * q1 + m.d
    y2 = m.a * y1 + m.b * 30.0 + m.c * q2 + m.d
    expected = 0.5 * (y1 - 2.0) ** 2 + 1.0 * (y2 - 3.0) ** 2

    values = mhe_objective(state, m, np.array([[q1, q2], [100.0, 100.0]]))
    assert values.shape == (2,)
    assert values[0] == pytest.approx(expected)


def test_estimate_needs_primed_buffers(toy_model):
    with pytest.raises(ValueError):
        estimate(EstimatorState(N=2, N_e=2, forgetting=0.9), toy_model, PRECISE, (50.0, 150.0))


def test_recovers_constant_disturbance():
    model = sensitive_model()
    config = MheConfig(N_e=3, forgetting=0.9, pso=PRECISE)
    mhe = MovingHorizonEstimator(model, config, q_nominal=100.0)
    y0 = model.steady_y(30.0, 110.0)
    mhe.prime(y0, 30.0)
    for _ in range(4):
        q_hat = mhe.update(y0, 30.0)
    assert q_hat == pytest.approx(110.0, abs=0.5)
    assert not mhe.clamped
    assert mhe.last_objective < 1e-6


def test_tracks_a_disturbance_step():
    model = sensitive_model()
    config = MheConfig(N_e=3, forgetting=0.9, pso=PRECISE)
    mhe = MovingHorizonEstimator(model, config, q_nominal=100.0)
    q_true = [100.0] * 5 + [120.0] * 7
    y0 = model.steady_y(30.0, 100.0)
    outputs = simulate(model, y0, 30.0, q_true)

    mhe.prime(y0, 30.0)
    estimates = [mhe.update(y, 30.0) for y in outputs]
    # estimates[k] is q(k | k+1)
    assert estimates[3] == pytest.approx(100.0, abs=0.5)
    for q_hat in estimates[5:]:
        assert q_hat == pytest.approx(120.0, abs=0.5)
    assert len(mhe.committed) == 5


def test_out_of_box_disturbance_is_flagged():
    model = sensitive_model()
    mhe = MovingHorizonEstimator(model, MheConfig(N_e=2, pso=PRECISE), q_nominal=100.0)
    y0 = model.steady_y(30.0, 100.0)
    mhe.prime(y0, 30.0)
    for y in simulate(model, y0, 30.0, [200.0] * 3):
        q_hat = mhe.update(y, 30.0)
    assert mhe.clamped
    assert q_hat == pytest.approx(150.0, rel=1e-3)


@pytest.mark.slow
def test_surrogate_estimator_is_ten_times_cheaper_than_full_state(params, options):
    # identical swarm budgets, no early stop on either side
    pso = PsoOptions(swarm_size=10, max_iter=5, stall_patience=1000, seed=1)
    config = MheConfig(N_e=3, pso=pso)
    reference = steady_state(30.0, params.q_nominal, None, params, options)
    plant = Plant(params, reference, options)
    y_meas = [plant.measure()]
    for _ in range(config.N_e):
        plant.step(30.0, 1.1 * params.q_nominal)
        y_meas.append(plant.measure())
    u_applied = np.full(config.N_e, 30.0)

    tic = time.perf_counter()
    result = FullStateMhe(params, config, reference.x, options).estimate(np.array(y_meas), u_applied)
    full_state = time.perf_counter() - tic
    assert len(result.best_point) == params.n_states + config.N_e
    assert np.isfinite(result.best_value)

    # default architecture; fit quality does not matter for the timing
    model = fit_surrogate(toy_dataset(n=512), TrainingConfig(epochs_residual=1, epochs_classifier=1))
    mhe = MovingHorizonEstimator(model, config, params.q_nominal)
    mhe.prime(y_meas[0], 30.0)
    mhe.update(y_meas[1], 30.0)
    tic = time.perf_counter()
    for y in y_meas[2:]:
        mhe.update(y, 30.0)
    surrogate = (time.perf_counter() - tic) / (len(y_meas) - 2)
    assert full_state >= 10.0 * surrogate
