"""
Validated configuration models and the YAML loaders that build them.

How to run:
   python -c "from utils.config import load_run_config; print(load_run_config('resources/configs/desk.yaml'))"
"""

from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.constants import DEFAULT_WORKERS, OS_MAX_DEFAULT, SETTLING_BAND
from utils.errors import ConfigError

SECONDS_PER_HOUR = 3600.0


class PlantParams(BaseModel):
    """
    Physical/chemical constants and flowsheet values of the mixer-settler cascade.

    Units: hours, litres, mol/L, L/h; k_U, k_H in m/s and d in m (converted by the
    transfer_rate_* properties).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_stages: int = 16
    feed_stage: int = 8
    K_U: float
    K_H: float
    k_U: float = 1e-2
    k_H: float = 1e-2
    d: float
    V_mix_total: float
    V_settler_aq: float
    V_settler_og: float
    A_E: float
    H_aq_E: float
    U_aq_F: float
    H_aq_F: float
    TBP_total: float
    u_min: float
    u_max: float
    du_max: float
    q_nominal: float
    T: float = 0.5

    @field_validator(
        "K_U", "K_H", "k_U", "k_H", "d", "V_mix_total", "V_settler_aq", "V_settler_og",
        "A_E", "H_aq_E", "U_aq_F", "H_aq_F", "TBP_total", "u_min", "u_max", "du_max",
        "q_nominal", "T",
    )
    @classmethod
    def _strictly_positive(cls, value: float, info) -> float:
        if not value > 0:
            raise ValueError(f"{info.field_name} must be strictly positive, got {value}")
        return value

    @model_validator(mode="after")
    def _check_layout_and_bounds(self) -> "PlantParams":
        if self.n_stages < 3:
            raise ValueError("n_stages must be at least 3")
        if not 1 < self.feed_stage < self.n_stages:
            raise ValueError("feed_stage must lie strictly inside 1..n_stages")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be smaller than u_max")
        return self

    @property
    def transfer_rate_U(self) -> float:
        """3 k_U / d in 1/h, the uranium mass-transfer prefactor per unit mixer aqueous volume."""
        return 3.0 * self.k_U / self.d * SECONDS_PER_HOUR

    @property
    def transfer_rate_H(self) -> float:
        return 3.0 * self.k_H / self.d * SECONDS_PER_HOUR

    @property
    def n_states(self) -> int:
        return 8 * self.n_stages

    @property
    def n_alg(self) -> int:
        return 2 * self.n_stages

    def without_uranium(self) -> "PlantParams":
        """Same plant fed with uranium-free aqueous feed (start-up initial condition)."""
        return self.model_copy(update={"U_aq_F": 0.0})


class IntegratorOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt_internal: float = 0.05
    newton_tol: float = 1e-10
    newton_max_iter: int = 12
    method: Literal["implicit-euler", "bdf2"] = "implicit-euler"
    alg_tol: float = 1e-13
    alg_max_iter: int = 60
    max_halvings: int = 10
    negative_tol: float = 1e-9
    steady_tol: float = 1e-9
    steady_max_iter: int = 400
    steady_fallback_hours: float = 5000.0

    @field_validator("dt_internal", "newton_tol", "alg_tol", "negative_tol", "steady_tol")
    @classmethod
    def _positive(cls, value: float, info) -> float:
        if not value > 0:
            raise ValueError(f"{info.field_name} must be positive")
        return value


class PsoOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    swarm_size: int = 30
    max_iter: int = 100
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    velocity_clamp: float = 0.2
    stall_tol: float = 1e-8
    stall_patience: int = 15
    seed: int = 0
    max_reinit: int = 1000
    workers: int = 1

    @model_validator(mode="after")
    def _check(self) -> "PsoOptions":
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be at least 2")
        if not 0 <= self.inertia < 1:
            raise ValueError("inertia must lie in [0, 1)")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if not 0 < self.velocity_clamp <= 1:
            raise ValueError("velocity_clamp is a fraction of the box width in (0, 1]")
        if self.max_reinit < 1 or self.max_iter < 1 or self.workers < 1:
            raise ValueError("max_reinit, max_iter and workers must be >= 1")
        return self


class MheConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    N_e: int = 3
    forgetting: float = 0.9
    q_box: Tuple[float, float] = (0.5, 1.5)
    pso: PsoOptions = PsoOptions(swarm_size=20, max_iter=60, seed=11)

    @model_validator(mode="after")
    def _check(self) -> "MheConfig":
        if self.N_e < 1:
            raise ValueError("N_e must be >= 1")
        if not 0 < self.forgetting < 1:
            raise ValueError("forgetting factor must lie in (0, 1)")
        if not 0 < self.q_box[0] < self.q_box[1]:
            raise ValueError("q_box must be (low, high) multipliers with 0 < low < high")
        return self


class NmpcConfig(BaseModel):
    """
    Weights left as None scale with the set points: w_p = w_q = 1/y_set and
    w_r = w_s = input_weight_factor / u_set.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    N_p: int = 3
    w_p: Optional[float] = None
    w_q: Optional[float] = None
    w_r: Optional[float] = None
    w_s: Optional[float] = None
    os_max: float = OS_MAX_DEFAULT
    enforce_zbar: bool = True
    epsilon: float = SETTLING_BAND
    y_set: Optional[float] = None
    input_weight_factor: float = 1.0
    u_snap_tol: float = 0.02
    q_change_tol: float = 0.01
    pso: PsoOptions = PsoOptions(swarm_size=30, max_iter=60, seed=23)

    @model_validator(mode="after")
    def _check(self) -> "NmpcConfig":
        if self.N_p < 1:
            raise ValueError("N_p must be >= 1")
        for name in ("w_p", "w_q", "w_r", "w_s"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (self.os_max > 0 and self.epsilon > 0):
            raise ValueError("os_max and epsilon must be positive")
        if self.input_weight_factor < 0:
            raise ValueError("input_weight_factor must be non-negative")
        return self


class ConstraintConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # tolerance on U_aq^D at stage 1; "auto" derives it from the sweep
    z_tol: Union[float, Literal["auto"]] = "auto"
    z_margin: float = 2.0


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_points: int = 41
    nominal_ratio: float = 0.375
    knee_tol: float = 0.01


class TrainingConfig(BaseModel):
    """Data generation + training settings (desk-scaled defaults)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = 2
    n_trajectories: int = 60
    steps_per_trajectory: int = 1800
    n_samples: Optional[int] = None  # cap on kept samples, None keeps all
    hold_range: Tuple[int, int] = (2, 20)
    q_range: Tuple[float, float] = (0.8, 1.2)
    saturated_share: float = 0.3
    split: Tuple[float, float, float] = (0.98, 0.01, 0.01)
    seed: int = 0
    lstm_hidden: int = 10
    lstm_layers: int = 2
    classifier_hidden: int = 50
    classifier_layers: int = 2
    lr: float = 1e-3
    batch_size: int = 1024
    epochs_residual: int = 13
    epochs_classifier: int = 5
    optimizer: Literal["sgd", "adam"] = "sgd"
    momentum: float = 0.0
    clip_norm: float = 1.0
    ridge_alpha: float = 1e-8
    workers: int = DEFAULT_WORKERS

    @model_validator(mode="after")
    def _check(self) -> "TrainingConfig":
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.epochs_residual < 1 or self.epochs_classifier < 1:
            raise ValueError("epochs_residual and epochs_classifier must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-12 or min(self.split) < 0:
            raise ValueError("split fractions must be non-negative and sum to 1")
        if not 1 <= self.hold_range[0] <= self.hold_range[1]:
            raise ValueError("hold_range must be (min, max) periods with 1 <= min <= max")
        if not 0 < self.q_range[0] < self.q_range[1]:
            raise ValueError("q_range must be (low, high) multipliers of q_nominal")
        return self


SetPoint = Union[float, Literal["nominal", "critical"]]


class ScenarioConfig(BaseModel):
    """
    Piecewise-constant schedules: lists of (time [h], value). Set points may be
    symbolic ("nominal", "critical") and are resolved against the sweep; disturbance
    values are multipliers of q_nominal.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: Literal["startup", "critical", "perturbed", "custom"] = "custom"
    duration: float = 50.0
    setpoint_schedule: List[Tuple[float, SetPoint]] = [(0.0, "nominal")]
    disturbance_schedule: List[Tuple[float, float]] = [(0.0, 1.0)]
    initial_condition: Literal["uranium-free", "nominal-steady"] = "uranium-free"
    measurement_noise_std: float = 0.0
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        for label, schedule in (
            ("setpoint_schedule", self.setpoint_schedule),
            ("disturbance_schedule", self.disturbance_schedule),
        ):
            times = [t for t, _ in schedule]
            if not times or times[0] != 0.0:
                raise ValueError(f"{label} must start at t=0")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError(f"{label} times must be strictly increasing")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    plant: PlantParams
    integrator: IntegratorOptions = IntegratorOptions()
    constraints: ConstraintConfig = ConstraintConfig()
    sweep: SweepConfig = SweepConfig()
    training: TrainingConfig = TrainingConfig()
    mhe: MheConfig = MheConfig()
    nmpc: NmpcConfig = NmpcConfig()
    scenarios: Dict[str, ScenarioConfig] = Field(default_factory=dict)


def _read_yaml(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Missing config file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except (yaml.YAMLError, IOError) as e:
        raise ConfigError(f"Error reading YAML file {path}: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return raw


def load_plant_params(path: Union[str, Path]) -> PlantParams:
    """
    Loads the flat plant parameter file (key: value per line).

    Args:
        path (str | Path): Path to the YAML file, e.g. resources/configs/nominal.yaml.

    Returns:
        PlantParams: Validated parameters.

    Raises:
        ConfigError: If the file is missing, malformed or violates an invariant.
    """
    raw = _read_yaml(path)
    try:
        return PlantParams(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid plant parameters in {path}:\n{e}")


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Loads a run/training config. Its `plant` key is a path (relative to the config
    file) to the flat plant parameter file, or an inline mapping.

    Args:
        path (str | Path): Path to the run config YAML.

    Returns:
        RunConfig: Fully validated configuration.
    """
    path = Path(path)
    raw = _read_yaml(path)
    plant_entry = raw.get("plant")
    if plant_entry is None:
        raise ConfigError(f"{path} must define a `plant` entry")
    if isinstance(plant_entry, str):
        raw["plant"] = load_plant_params((path.parent / plant_entry).resolve())
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config in {path}:\n{e}")
