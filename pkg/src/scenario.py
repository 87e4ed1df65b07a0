"""
Closed-loop runs of the cascade: the simulated plant on one side, the surrogate-based
estimator and controller on the other, connected only through the measured y.

Every period runs measure -> estimate q -> target/switching -> NMPC -> plant step.

How to run:
   python ./src/main.py run --scenario startup --config ./resources/configs/desk.yaml \
       --weights ./data/runs/desk/surrogate.pt --out ./data/runs/startup
"""

import time
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from metrics import compute_metrics, print_metrics, settling_ratio
from sweep import OperatingPoints
from utils.asthetics import format_banner
from utils.config import RunConfig, ScenarioConfig, SetPoint
from utils.constants import METRICS_FILENAME, RUNS_DIR
from utils.control.mhe import MovingHorizonEstimator
from utils.control.nmpc import SurrogateController
from utils.errors import CascadeError, ConfigError, ScenarioAbortedError
from utils.file_io import init_run_dir, load_yaml, save_metrics, save_record, write_plot_script
from utils.logging_utils import MasterLogger, StandAloneLogger
from utils.plant.dae import Plant, steady_state
from utils.states import ClosedLoopRecord, ClosedLoopRow, ControlDecision, ControlMode, PlantState
from utils.surrogate.dataset import ThetaVector

BOUND_TOL = 1e-12
RATE_TOL = 1e-9

BUILTIN_SCENARIOS: Dict[str, ScenarioConfig] = {
    "startup": ScenarioConfig(name="startup", duration=50.0),
    "critical": ScenarioConfig(
        name="critical",
        duration=150.0,
        setpoint_schedule=[(0.0, "nominal"), (25.0, "critical"), (100.0, "nominal")],
    ),
    # magnitudes are assumptions: +-10 % of the nominal solvent flow
    "perturbed": ScenarioConfig(
        name="perturbed",
        duration=80.0,
        disturbance_schedule=[(0.0, 1.0), (20.0, 1.1), (40.0, 1.0), (60.0, 0.9)],
    ),
}


def resolve_scenario(name: str, config: RunConfig) -> ScenarioConfig:
    """Scenario from the run config, falling back to the built-in ones."""
    if name in config.scenarios:
        return config.scenarios[name]
    if name in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name]
    known = sorted(set(BUILTIN_SCENARIOS) | set(config.scenarios))
    raise ConfigError(f"Unknown scenario '{name}'; known: {', '.join(known)}")


def schedule_value(schedule, t: float):
    """Value of a piecewise-constant (time, value) schedule at time t."""
    value = schedule[0][1]
    for start, v in schedule:
        if start <= t + 1e-9:
            value = v
        else:
            break
    return value


def resolve_setpoint(value: SetPoint, points: OperatingPoints) -> float:
    if value == "nominal":
        return points.y_nominal
    if value == "critical":
        return points.y_critical
    return float(value)


def initial_state(scenario: ScenarioConfig, config: RunConfig, points: OperatingPoints) -> PlantState:
    """
    "uranium-free": steady state of the cascade holding only acid and TBP, fed at the
    nominal flow; the uranium feed is switched on at t=0. "nominal-steady": the steady
    state at the nominal operating point.
    """
    params = config.plant
    if scenario.initial_condition == "uranium-free":
        params = params.without_uranium()
    return steady_state(points.u_nominal, config.plant.q_nominal, None, params, config.integrator)


def _history(mhe: MovingHorizonEstimator, N: int, u_prev: float, q_hat: float) -> ThetaVector:
    """theta seed for the controller: last N+1 measurements, last N inputs and estimates."""
    state = mhe.state
    return ThetaVector(
        y_hist=state.y_meas[-(N + 1) :],
        u_hist=[*state.u_applied[-N:], u_prev],
        q_hist=[*state.q_committed[-N:], q_hat],
    )


def run_scenario(
    scenario: ScenarioConfig,
    config: RunConfig,
    points: OperatingPoints,
    model=None,
    out_dir: Optional[Union[str, Path]] = None,
    open_loop: bool = False,
    quiet: bool = False,
) -> ClosedLoopRecord:
    """
    Runs one scenario and writes its artifacts.

    Args:
        scenario (ScenarioConfig): Schedules, duration, initial condition and seed.
        config (RunConfig): Plant, integrator, estimator and controller settings.
        points (OperatingPoints): Operating points resolving symbolic set points.
        model: Trained surrogate (unused in open loop).
        out_dir (str | Path, optional): Artifact directory, default ./data/runs/<name>.
        open_loop (bool): Apply u_set directly instead of the NMPC move.
        quiet (bool): Skip the console summary.

    Returns:
        ClosedLoopRecord: One row per control period.

    Raises:
        ScenarioAbortedError: When an engine error stops the run; the partial record is
            written first.
    """
    if model is None and not open_loop:
        raise ConfigError("A trained surrogate is required for closed-loop runs")
    master_logger = MasterLogger.get_instance()
    params = config.plant
    out_dir = init_run_dir(out_dir or Path(RUNS_DIR) / scenario.name)
    logger = StandAloneLogger(log_path=str(out_dir / "run.log"), init=True, clear=True)
    label = f"{scenario.name} ({'open' if open_loop else 'closed'} loop)"
    logger.info(f"Starting {label}: duration {scenario.duration} h, seed {scenario.seed}")

    plant = Plant(
        params,
        initial_state(scenario, config, points),
        config.integrator,
        noise_std=scenario.measurement_noise_std,
        seed=scenario.seed,
    )
    nmpc_config = config.nmpc
    controller = SurrogateController(model, params, nmpc_config, config.integrator)
    mhe = MovingHorizonEstimator(model, config.mhe, params.q_nominal) if not open_loop else None
    N = model.N if model is not None else 0

    record = ClosedLoopRecord(scenario.name)
    n_steps = int(round(scenario.duration / params.T))
    u_prev = points.u_nominal
    q_hat = params.q_nominal

    for k in range(n_steps):
        t = k * params.T
        try:
            q_true = params.q_nominal * schedule_value(scenario.disturbance_schedule, t)
            y_set = resolve_setpoint(schedule_value(scenario.setpoint_schedule, t), points)
            y_m = plant.measure()
            z = plant.z

            tic = time.perf_counter()
            mhe_clamped = False
            if mhe is not None:
                if k == 0:
                    mhe.prime(y_m, u_prev)
                else:
                    q_hat = mhe.update(y_m, u_prev)
                    mhe_clamped = mhe.clamped
            t_mhe = time.perf_counter() - tic

            tic = time.perf_counter()
            if open_loop:
                controller.update_target(y_set, q_hat)
                decision = ControlDecision(
                    u_applied=controller.u_set,
                    u_sequence=np.full(nmpc_config.N_p, controller.u_set),
                    mode=ControlMode.STEADY_HOLD,
                    u_set=controller.u_set,
                    zbar_predicted=-1,
                    target_clamped=controller.target_clamped,
                )
            else:
                decision = controller.step(_history(mhe, N, u_prev, q_hat), q_hat, u_prev, y_set)
            t_control = time.perf_counter() - tic

            u = decision.u_applied
            overshoot = y_m / y_set - 1.0
            row = ClosedLoopRow(
                step=k,
                t=t,
                y_set=y_set,
                y_m=y_m,
                z=z,
                zbar_predicted=decision.zbar_predicted,
                u=u,
                u_set=decision.u_set,
                q_true=q_true,
                q_hat=q_hat,
                mode=decision.mode.value,
                overshoot=overshoot,
                z_violation=z > points.z_tol,
                os_violation=overshoot > nmpc_config.os_max,
                bound_violation=u < params.u_min - BOUND_TOL or u > params.u_max + BOUND_TOL,
                rate_violation=abs(u - u_prev) > params.du_max + RATE_TOL,
                rate_relaxed=decision.rate_relaxed,
                alarm=decision.alarm,
                mhe_clamped=mhe_clamped,
            )
            if row.z_violation:
                raffinate = ", ".join(f"{name}={value:.3g}" for name, value in plant.state.stage(1).items())
                logger.warning(f"Raffinate above z_tol at k={k}: stage 1 holds {raffinate}")
            profile = plant.profile()

            tic = time.perf_counter()
            report = plant.step(u, q_true)
            t_plant = time.perf_counter() - tic
        except CascadeError as e:
            record.aborted_at = k
            path = save_record(record, out_dir)
            logger.error(f"Aborted at step {k}: {e}")
            master_logger.error(f"Scenario {scenario.name} aborted at step {k}: {e}")
            raise ScenarioAbortedError(k, e, str(path))

        record.append(
            row,
            profile,
            {"mhe": t_mhe, "control": t_control, "plant": t_plant, "substeps": report.substeps},
        )
        logger.info(
            f"k={k} t={t:.2f} y_m={y_m:.6g} y_set={y_set:.6g} u={u:.5g} q={q_true:.4g} "
            f"q_hat={q_hat:.4g} mode={decision.mode.value}"
        )
        u_prev = u

    save_record(record, out_dir)
    write_plot_script(out_dir, label, nmpc_config.epsilon, params.feed_stage + 1)
    metrics = compute_metrics(record, scenario.name, nmpc_config.epsilon, nmpc_config.os_max)
    metrics["open_loop"] = open_loop
    baseline = out_dir.parent / f"{out_dir.name}_open" / METRICS_FILENAME
    if not open_loop and baseline.exists():
        metrics["settling_ratio"] = settling_ratio(load_yaml(baseline), metrics)
        logger.info(f"Open-loop baseline {baseline}: settling ratio {metrics['settling_ratio']:.3g}")
    save_metrics(out_dir, metrics)
    master_logger.info(f"Scenario {label} finished: {len(record)} steps written to {out_dir}")

    if not quiet:
        print(format_banner(f"Run finished: {label}"))
        print_metrics(metrics)
    return record
