import pytest

from utils.config import (
    MheConfig,
    NmpcConfig,
    PsoOptions,
    ScenarioConfig,
    TrainingConfig,
    load_plant_params,
    load_run_config,
)
from utils.constants import DESK_CONFIG_PATH, NOMINAL_PLANT_PATH, SMOKE_CONFIG_PATH
from utils.errors import ConfigError


def test_nominal_plant_file(params):
    assert params.n_stages == 16 and params.feed_stage == 8
    assert params.n_states == 128 and params.n_alg == 32
    assert params.u_min < params.u_max
    assert params.transfer_rate_U == pytest.approx(3 * params.k_U / params.d * 3600.0)


@pytest.mark.parametrize("path", [DESK_CONFIG_PATH, SMOKE_CONFIG_PATH])
def test_shipped_run_configs_load(path, params):
    config = load_run_config(path)
    assert config.plant == params
    assert config.nmpc.input_weight_factor == pytest.approx(0.01)


def test_desk_config_scenarios():
    config = load_run_config(DESK_CONFIG_PATH)
    noisy = config.scenarios["noisy"]
    assert noisy.measurement_noise_std == pytest.approx(1e-3)
    assert noisy.disturbance_schedule[1] == (20.0, 1.1)


def test_without_uranium_only_drops_the_feed(params):
    free = params.without_uranium()
    assert free.U_aq_F == 0.0
    assert free.H_aq_F == params.H_aq_F
    assert params.U_aq_F > 0


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_plant_params(tmp_path / "nope.yaml")


def test_invalid_plant_values(tmp_path):
    text = NOMINAL_PLANT_PATH.read_text(encoding="utf-8").replace("feed_stage: 8", "feed_stage: 16")
    path = tmp_path / "plant.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_plant_params(path)


def test_run_config_needs_a_plant(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("training:\n  N: 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(f"plant: {NOMINAL_PLANT_PATH}\nnmpc:\n  horizon: 4\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: PsoOptions(swarm_size=1),
        lambda: PsoOptions(inertia=1.0),
        lambda: MheConfig(forgetting=1.0),
        lambda: MheConfig(q_box=(1.5, 0.5)),
        lambda: NmpcConfig(w_p=-1.0),
        lambda: TrainingConfig(split=(0.5, 0.2, 0.2)),
        lambda: TrainingConfig(epochs_residual=0),
        lambda: ScenarioConfig(setpoint_schedule=[(1.0, "nominal")]),
        lambda: ScenarioConfig(disturbance_schedule=[(0.0, 1.0), (0.0, 1.1)]),
    ],
)
def test_model_validation(factory):
    with pytest.raises(ValueError):
        factory()
