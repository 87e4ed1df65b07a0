from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from sweep import OperatingPoints, load_or_run_sweep
from training import train_pipeline
from utils.config import IntegratorOptions, RunConfig, TrainingConfig, load_plant_params, load_run_config
from utils.constants import DESK_CONFIG_PATH, NOMINAL_PLANT_PATH
from utils.logging_utils import MasterLogger
from utils.surrogate.dataset import Dataset, assign_split
from utils.surrogate.networks import SurrogateModel
from utils.surrogate.training import TrainingReport, fit_surrogate


@pytest.fixture(scope="session", autouse=True)
def master_log(tmp_path_factory):
    """Routes engine logging of the whole session into a temporary file."""
    path = tmp_path_factory.mktemp("logs") / "_master.log"
    MasterLogger._instance = None
    MasterLogger(log_path=str(path), init=True, clear=True)
    yield path
    MasterLogger._instance = None


@pytest.fixture(scope="session")
def params():
    return load_plant_params(NOMINAL_PLANT_PATH)


@pytest.fixture(scope="session")
def options():
    return IntegratorOptions()


class ToyModel:
    """
    Linear stand-in for the surrogate:
        y(k+1) = a y(k) + b u(k) + c q(k) + d
    and the constraint is predicted safe unless u(k) exceeds u_unsafe.
    """

    def __init__(self, N=2, a=0.8, b=0.01, c=-0.002, d=0.25, u_unsafe=np.inf):
        self.N = N
        self.a, self.b, self.c, self.d = a, b, c, d
        self.u_unsafe = u_unsafe
        self.calls = 0

    def predict_batch(self, theta):
        theta = np.atleast_2d(theta)
        N = self.N
        y, u, q = theta[:, N], theta[:, 2 * N + 1], theta[:, 3 * N + 2]
        self.calls += 1
        p_safe = np.where(u > self.u_unsafe, 0.0, 1.0)
        return self.a * y + self.b * u + self.c * q + self.d, p_safe

    def steady_y(self, u, q):
        return (self.b * u + self.c * q + self.d) / (1.0 - self.a)

    def steady_u(self, y, q):
        return ((1.0 - self.a) * y - self.c * q - self.d) / self.b


@pytest.fixture
def toy_model():
    return ToyModel()


def toy_dataset(n=512, N=2, seed=0, noise=0.0):
    """Samples of the ToyModel law with random histories; zbar = 1 when u(k) < 40."""
    rng = np.random.default_rng(seed)
    model = ToyModel(N=N)
    theta = np.hstack(
        [
            rng.uniform(0.2, 1.0, size=(n, N + 1)),
            rng.uniform(5.0, 80.0, size=(n, N + 1)),
            rng.uniform(80.0, 120.0, size=(n, N + 1)),
        ]
    )
    y_next, _ = model.predict_batch(theta)
    y_next = y_next + noise * rng.standard_normal(n)
    zbar = (theta[:, 2 * N + 1] < 40.0).astype(int)
    return Dataset(N, theta, y_next, zbar, assign_split(n, (0.8, 0.1, 0.1), seed))


@pytest.fixture(scope="session")
def tiny_surrogate():
    """A small trained surrogate (seconds to fit)."""
    config = TrainingConfig(
        lstm_hidden=4,
        lstm_layers=1,
        classifier_hidden=8,
        classifier_layers=1,
        epochs_residual=2,
        epochs_classifier=2,
        batch_size=64,
        optimizer="adam",
        lr=1e-3,
    )
    return fit_surrogate(toy_dataset(n=256), config)


@dataclass
class DeskPipeline:
    config: RunConfig
    points: OperatingPoints
    model: SurrogateModel
    report: TrainingReport
    root: Path


@pytest.fixture(scope="session")
def desk_pipeline(tmp_path_factory):
    """Desk-scale sweep and surrogate, built once per session (tens of minutes)."""
    config = load_run_config(DESK_CONFIG_PATH)
    root = tmp_path_factory.mktemp("desk")
    model, report, _ = train_pipeline(config, root / "model", quiet=True, sweep_dir=root / "sweep")
    _, points = load_or_run_sweep(config, root / "sweep")
    return DeskPipeline(config, points, model, report, root)
