import os
from pathlib import Path

from dotenv import load_dotenv

REPO_ROOT = Path(__file__).resolve().parents[2]

# Optional overrides (log directory, worker count) live in ./resources/.env
load_dotenv(REPO_ROOT / "resources" / ".env")

LOG_DIR = os.getenv("CASCADE_LOG_DIR", "./logs")
MASTER_LOG_PATH = os.path.join(LOG_DIR, "_master.log")
DEFAULT_WORKERS = int(os.getenv("CASCADE_WORKERS", "1"))

CONFIG_DIR = REPO_ROOT / "resources" / "configs"
NOMINAL_PLANT_PATH = CONFIG_DIR / "nominal.yaml"
DESK_CONFIG_PATH = CONFIG_DIR / "desk.yaml"
SMOKE_CONFIG_PATH = CONFIG_DIR / "smoke.yaml"
RUNS_DIR = "./data/runs"
# one sweep cache per repo; entries are keyed by the config fingerprint
SWEEP_DIR = RUNS_DIR + "/sweep"

# State vector layout: eight blocks of n_stages entries, in this order
BLOCK_NAMES = (
    "U_aq_M",
    "U_og_M",
    "U_aq_D",
    "U_og_D",
    "H_aq_M",
    "H_og_M",
    "H_aq_D",
    "H_og_D",
)
N_BLOCKS = len(BLOCK_NAMES)

# settling band and the overshoot bound used when nothing else is configured
SETTLING_BAND = 0.05
OS_MAX_DEFAULT = 0.20

# Dataset rounding (decimal places) applied to every stored float
DATASET_DECIMALS = 6

WEIGHTS_FORMAT_VERSION = 1
WEIGHTS_MAGIC = "cascade-surrogate"

RECORD_FILENAME = "record.csv"
TIMINGS_FILENAME = "timings.csv"
PROFILES_FILENAME = "profiles.csv"
METRICS_FILENAME = "metrics.yaml"
PLOT_SCRIPT_FILENAME = "plot_run.py"
SWEEP_FILENAME = "sweep.csv"
OPERATING_POINTS_FILENAME = "operating_points.yaml"
WEIGHTS_FILENAME = "surrogate.pt"
DATASET_FILENAME = "dataset.csv"

# Marker written for settling times / delays that never happened
NEVER = float("inf")
