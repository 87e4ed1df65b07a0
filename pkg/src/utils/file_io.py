import os
from pathlib import Path
from typing import Union

import numpy as np
import yaml

from utils.constants import (
    METRICS_FILENAME,
    PLOT_SCRIPT_FILENAME,
    PROFILES_FILENAME,
    RECORD_FILENAME,
    TIMINGS_FILENAME,
)
from utils.errors import ConfigError
from utils.states import ClosedLoopRecord

PathLike = Union[str, Path]


def init_run_dir(path: PathLike) -> Path:
    """
    Creates the output directory of a run if it does not already exist.

    Args:
        path (str | Path): Directory to create.

    Returns:
        Path: The directory.
    """

    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def _plain(value):
    """numpy scalars and arrays to YAML-safe python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and np.isinf(value):
        return ".inf" if value > 0 else "-.inf"
    return value


def save_yaml(path: PathLike, data: dict) -> None:
    """
    Saves a dictionary as block-style YAML, overwriting the file.

    Infinite values are written as the strings ".inf"/"-.inf" so the file stays readable
    by any YAML loader.

    Args:
        path (str | Path): Target file.
        data (dict): Values to save.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(_plain(data), f, sort_keys=False, default_flow_style=False)


def load_yaml(path: PathLike) -> dict:
    """
    Loads a YAML mapping written by save_yaml.

    Raises:
        ConfigError: If the file is missing or does not hold a mapping.
    """

    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (yaml.YAMLError, FileNotFoundError) as e:
        raise ConfigError(f"Error reading YAML file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return _restore(data)


def _restore(value):
    """Inverse of the infinity encoding in _plain, at any depth."""
    if isinstance(value, dict):
        return {k: _restore(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_restore(v) for v in value]
    if value in (".inf", "-.inf"):
        return float(value)
    return value


def save_record(record: ClosedLoopRecord, out_dir: PathLike) -> Path:
    """
    Writes the closed-loop record, the stage profiles and the solver timings as CSV.

    Timings go to their own file so the record itself is identical across replays.

    Returns:
        Path: Path of the record CSV.
    """

    out_dir = init_run_dir(out_dir)
    record_path = out_dir / RECORD_FILENAME
    record.to_frame().to_csv(record_path, index=False, float_format="%.10g")
    record.profiles_frame().to_csv(out_dir / PROFILES_FILENAME, index=False, float_format="%.10g")
    record.timings_frame().to_csv(out_dir / TIMINGS_FILENAME, index=False, float_format="%.6f")
    return record_path


PLOT_TEMPLATE = '''"""
Plots of one closed-loop run: y, u, the disturbance estimate and stage profiles.

How to run:
   python {script_name}
"""

from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

HERE = Path(__file__).resolve().parent
record = pd.read_csv(HERE / "{record}")
profiles = pd.read_csv(HERE / "{profiles}")

fig, axes = plt.subplots(3, 1, sharex=True, figsize=(9, 9))
axes[0].plot(record["t"], record["y_m"], label="y measured")
axes[0].step(record["t"], record["y_set"], where="post", linestyle="--", label="y_set")
axes[0].plot(record["t"], record["y_set"] * (1 + {band}), color="grey", linewidth=0.5)
axes[0].plot(record["t"], record["y_set"] * (1 - {band}), color="grey", linewidth=0.5)
axes[0].set_ylabel("U_aq^D stage {y_stage} [mol/L]")
axes[0].legend()
axes[1].step(record["t"], record["u"], where="post", label="u applied")
axes[1].step(record["t"], record["u_set"], where="post", linestyle="--", label="u_set")
axes[1].set_ylabel("feed flow [L/h]")
axes[1].legend()
axes[2].step(record["t"], record["q_true"], where="post", label="q true")
axes[2].plot(record["t"], record["q_hat"], marker=".", linestyle="none", label="q estimate")
axes[2].set_ylabel("solvent flow [L/h]")
axes[2].set_xlabel("t [h]")
axes[2].legend()
fig.suptitle("{title}")
fig.tight_layout()
fig.savefig(HERE / "trajectories.png", dpi=150)

stages = [c for c in profiles.columns if c.startswith("stage_")]
picks = profiles.iloc[:: max(1, len(profiles) // 8)]
fig2, ax = plt.subplots(figsize=(9, 5))
for _, row in picks.iterrows():
    ax.plot(range(1, len(stages) + 1), row[stages].to_numpy(), marker="o", label=f"t={{row['t']:.1f}} h")
ax.set_xlabel("stage")
ax.set_ylabel("U_aq^D [mol/L]")
ax.legend(fontsize="small")
fig2.tight_layout()
fig2.savefig(HERE / "profiles.png", dpi=150)
plt.show()
'''


def write_plot_script(out_dir: PathLike, title: str, band: float, y_stage: int) -> Path:
    """Generates the matplotlib script that renders a run directory."""
    path = init_run_dir(out_dir) / PLOT_SCRIPT_FILENAME
    script = PLOT_TEMPLATE.format(
        script_name=PLOT_SCRIPT_FILENAME,
        record=RECORD_FILENAME,
        profiles=PROFILES_FILENAME,
        band=band,
        y_stage=y_stage,
        title=title,
    )
    path.write_text(script, encoding="utf-8")
    return path


def save_metrics(out_dir: PathLike, metrics: dict) -> Path:
    path = init_run_dir(out_dir) / METRICS_FILENAME
    save_yaml(path, metrics)
    return path
