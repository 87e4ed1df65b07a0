"""
Steady-state sweep of the cascade: y and z against the feed flow u at nominal solvent flow,
and the operating points derived from it (plateau, critical flow, nominal set point and
the raffinate tolerance used to label the classifier data).

How to run:
   python ./src/main.py sweep --config ./resources/configs/desk.yaml
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from utils.asthetics import format_table, print_section
from utils.config import IntegratorOptions, PlantParams, RunConfig
from utils.constants import OPERATING_POINTS_FILENAME, SWEEP_FILENAME
from utils.errors import ConfigError
from utils.file_io import init_run_dir, load_yaml, save_yaml
from utils.logging_utils import MasterLogger, StandAloneLogger
from utils.plant.cascade import uranium_edge
from utils.plant.dae import solve_u_set, steady_state
from utils.states import PlantState

Z_TOL_FLOOR = 1e-8


@dataclass
class SweepResult:
    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    profiles: np.ndarray  # (n_points, n_stages) settler aqueous uranium
    q: float
    states: List[PlantState] = field(default_factory=list, repr=False)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.y) > 0))

    def edges(self) -> np.ndarray:
        """Uranium edge stage of every swept profile."""
        return np.array([uranium_edge(p) for p in self.profiles])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"u": self.u, "y": self.y, "z": self.z, "edge": self.edges()})
        for n in range(self.profiles.shape[1]):
            frame[f"stage_{n + 1}"] = self.profiles[:, n]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, q: float) -> "SweepResult":
        stages = [c for c in frame.columns if c.startswith("stage_")]
        return cls(
            u=frame["u"].to_numpy(),
            y=frame["y"].to_numpy(),
            z=frame["z"].to_numpy(),
            profiles=frame[stages].to_numpy(),
            q=q,
        )


@dataclass
class OperatingPoints:
    y_plateau: float
    u_critical: float
    y_critical: float
    y_nominal: float
    u_nominal: float
    z_tol: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "y_plateau": self.y_plateau,
            "u_critical": self.u_critical,
            "y_critical": self.y_critical,
            "y_nominal": self.y_nominal,
            "u_nominal": self.u_nominal,
            "z_tol": self.z_tol,
            "ratio": self.ratio,
        }


def steady_sweep(
    params: PlantParams,
    n_points: int = 41,
    options: IntegratorOptions = IntegratorOptions(),
    q: Optional[float] = None,
) -> SweepResult:
    """
    Continuation of steady states over an even u grid on [u_min, u_max].

    Each point starts from the previous steady state.

    Args:
        params (PlantParams): Plant parameters.
        n_points (int): Grid size.
        options (IntegratorOptions): Steady-state solver settings.
        q (float, optional): Solvent flow; defaults to q_nominal.

    Returns:
        SweepResult: y, z and the settler profile at every grid point.
    """
    logger = MasterLogger.get_instance()
    q = params.q_nominal if q is None else q
    grid = np.linspace(params.u_min, params.u_max, n_points)
    states = []
    guess = None
    for u in grid:
        state = steady_state(float(u), q, guess, params, options)
        states.append(state)
        guess = state.x
        logger.debug(f"sweep u={u:.4g}: y={state.y:.6g} z={state.z:.3e}")
    result = SweepResult(
        u=grid,
        y=np.array([s.y for s in states]),
        z=np.array([s.z for s in states]),
        profiles=np.vstack([s.settler_aqueous_uranium for s in states]),
        q=q,
        states=states,
    )
    if not result.is_monotone():
        logger.warning("Steady-state y(u) is not strictly increasing over the sweep")
    return result


def critical_index(sweep: SweepResult, knee_tol: float = 0.01) -> int:
    """First grid point whose y lies within knee_tol of the plateau."""
    plateau = float(sweep.y.max())
    return int(np.argmax(sweep.y >= (1.0 - knee_tol) * plateau))


def operating_points(
    sweep: SweepResult,
    params: PlantParams,
    ratio: float = 0.375,
    knee_tol: float = 0.01,
    z_margin: float = 2.0,
    z_tol: Union[float, str] = "auto",
    options: IntegratorOptions = IntegratorOptions(),
) -> OperatingPoints:
    """
    Derives the plateau, critical and nominal operating points from a sweep.

    Args:
        sweep (SweepResult): Steady-state sweep at nominal solvent flow.
        params (PlantParams): Plant parameters (for the nominal feed flow solve).
        ratio (float): Nominal set point as a fraction of the critical one.
        knee_tol (float): Relative distance from the plateau that counts as saturated.
        z_margin (float): Multiplier on z at the critical flow when z_tol is "auto".
        z_tol (float | "auto"): Raffinate tolerance or "auto".
        options (IntegratorOptions): Steady-state solver settings.

    Returns:
        OperatingPoints: The derived values.
    """
    index = critical_index(sweep, knee_tol)
    y_critical = float(sweep.y[index])
    y_nominal = ratio * y_critical
    u_nominal = solve_u_set(y_nominal, sweep.q, params, options)
    if z_tol == "auto":
        z_tol = max(z_margin * float(sweep.z[index]), Z_TOL_FLOOR)
    return OperatingPoints(
        y_plateau=float(sweep.y.max()),
        u_critical=float(sweep.u[index]),
        y_critical=y_critical,
        y_nominal=y_nominal,
        u_nominal=float(u_nominal),
        z_tol=float(z_tol),
        ratio=ratio,
    )


def _fingerprint(config: RunConfig) -> str:
    payload = {
        "plant": config.plant.model_dump(),
        "sweep": config.sweep.model_dump(),
        "constraints": config.constraints.model_dump(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def load_or_run_sweep(config: RunConfig, out_dir: Union[str, Path]) -> Tuple[SweepResult, OperatingPoints]:
    """
    Reuses sweep.csv and operating_points.yaml from out_dir when they were produced with
    the same plant, sweep and constraint settings; otherwise recomputes and saves them.
    """
    logger = MasterLogger.get_instance()
    out_dir = init_run_dir(out_dir)
    sweep_path = out_dir / SWEEP_FILENAME
    points_path = out_dir / OPERATING_POINTS_FILENAME
    fingerprint = _fingerprint(config)

    if sweep_path.exists() and points_path.exists():
        try:
            cached = load_yaml(points_path)
            if cached.get("fingerprint") == fingerprint:
                logger.info(f"Reusing cached sweep from {out_dir}")
                cached.pop("fingerprint")
                sweep = SweepResult.from_frame(pd.read_csv(sweep_path), config.plant.q_nominal)
                return sweep, OperatingPoints(**cached)
        except (ConfigError, TypeError, KeyError) as e:
            logger.warning(f"Ignoring unreadable sweep cache in {out_dir}: {e}")

    run_log = StandAloneLogger(log_path=str(out_dir / "sweep.log"), init=True, clear=True)
    run_log.info(f"Sweeping {config.sweep.n_points} points, fingerprint {fingerprint}")
    sweep = steady_sweep(config.plant, config.sweep.n_points, config.integrator)
    for u, y, z in zip(sweep.u, sweep.y, sweep.z):
        run_log.info(f"u={u:.5g} y={y:.8g} z={z:.3e}")
    points = operating_points(
        sweep,
        config.plant,
        config.sweep.nominal_ratio,
        config.sweep.knee_tol,
        config.constraints.z_margin,
        config.constraints.z_tol,
        config.integrator,
    )
    sweep.to_frame().to_csv(sweep_path, index=False, float_format="%.10g")
    save_yaml(points_path, {**points.to_dict(), "fingerprint": fingerprint})
    run_log.info(f"Operating points: {points.to_dict()}")
    if not sweep.is_monotone():
        run_log.warning("y(u) is not strictly increasing over the sweep")
    return sweep, points


def print_sweep(sweep: SweepResult, points: OperatingPoints) -> None:
    step = max(1, len(sweep.u) // 10)
    rows = [(u, y, z, e) for u, y, z, e in zip(sweep.u, sweep.y, sweep.z, sweep.edges())][::step]
    print_section("📈 Steady-state sweep (q = %.4g L/h):" % sweep.q, format_table(["u [L/h]", "y", "z", "edge"], rows))
    body = "\n".join(
        [
            f"Strictly increasing y(u): {'yes' if sweep.is_monotone() else 'NO'}",
            f"Plateau y:               {points.y_plateau:.6g}",
            f"Critical flow:           {points.u_critical:.4g} L/h (y = {points.y_critical:.6g})",
            f"Nominal set point:       {points.y_nominal:.6g} ({points.ratio:.1%} of critical)",
            f"Nominal feed flow:       {points.u_nominal:.4g} L/h",
            f"Raffinate tolerance:     {points.z_tol:.3e}",
        ]
    )
    print_section("🎯 Operating points:", body)
