import numpy as np
import pytest
import torch

from sweep import OperatingPoints
from training import REPORT_FILENAME, excitation_plan, train_pipeline
from utils.config import load_run_config
from utils.constants import DATASET_FILENAME, SMOKE_CONFIG_PATH, WEIGHTS_FILENAME
from utils.file_io import load_yaml
from utils.surrogate.dataset import simulate_trajectory
from utils.surrogate.networks import rollout
from utils.surrogate.serialization import load_weights

POINTS = OperatingPoints(
    y_plateau=1.0, u_critical=60.0, y_critical=0.8, y_nominal=0.3, u_nominal=30.0, z_tol=1e-3, ratio=0.375
)


@pytest.fixture(scope="module")
def smoke_config():
    return load_run_config(SMOKE_CONFIG_PATH)


def test_excitation_plan_spans_the_input_box(smoke_config):
    plan = excitation_plan(smoke_config, POINTS)
    plant = smoke_config.plant
    assert plan.u_box == (plant.u_min, plant.u_max)
    assert plan.q_box[0] < plant.q_nominal < plan.q_box[1]
    assert plan.u_saturation == POINTS.u_critical
    assert plan.n_trajectories == 4 and plan.steps == 300


@pytest.mark.slow
def test_smoke_training_writes_loadable_weights(smoke_config, tmp_path):
    model, report, weights = train_pipeline(smoke_config, tmp_path, quiet=True, sweep_dir=tmp_path / "sweep")
    assert weights == tmp_path / WEIGHTS_FILENAME
    for name in (DATASET_FILENAME, REPORT_FILENAME, "train.log"):
        assert (tmp_path / name).exists()
    loaded = load_weights(weights)
    assert loaded.N == model.N == 2
    assert load_yaml(tmp_path / REPORT_FILENAME)["val_accuracy"] == pytest.approx(report.val_accuracy)


def assert_same_payload(first, second):
    assert first.keys() == second.keys()
    for key, value in first.items():
        other = second[key]
        if isinstance(value, torch.Tensor):
            assert torch.equal(value, other), key
        elif isinstance(value, dict):
            assert_same_payload(value, other)
        else:
            assert value == other, key


@pytest.mark.slow
def test_training_twice_gives_identical_weights(smoke_config, tmp_path):
    sweep_dir = tmp_path / "sweep"
    paths = [
        train_pipeline(smoke_config, tmp_path / name, quiet=True, sweep_dir=sweep_dir)[2]
        for name in ("first", "second")
    ]
    # payloads, not file bytes: the archive may carry a per-write record id
    first, second = (torch.load(path, weights_only=True) for path in paths)
    assert_same_payload(first, second)


@pytest.mark.slow
def test_desk_surrogate_accuracy(desk_pipeline):
    report = desk_pipeline.report
    assert report.n_samples >= 100_000
    assert report.val_mae <= 5e-3
    assert report.val_accuracy >= 0.85


@pytest.mark.slow
def test_desk_surrogate_rollout_tracks_the_plant(desk_pipeline):
    config, points, model = desk_pipeline.config, desk_pipeline.points, desk_pipeline.model
    plant = config.plant
    u_step = min(1.1 * points.u_nominal, plant.u_max)
    N, horizon = model.N, 3
    # rest at u_nominal, then a 10 % feed step at k = N
    u_seq = np.array([points.u_nominal] * N + [u_step] * horizon)
    q_seq = np.full(len(u_seq), plant.q_nominal)
    y, _ = simulate_trajectory(plant, config.integrator, u_seq, q_seq)

    y_hat, _ = rollout(model, y[: N + 1], u_seq, q_seq)
    expected = y[N + 1 : N + 1 + horizon]
    assert np.all(np.abs(y_hat[0] - expected) <= 0.05 * np.abs(expected))
