"""
Weights file for the surrogate: a versioned dict written with torch.save.

Layout:
    magic, version, N, n_theta, z_tol
    theta_mean / theta_scale / y_mean / y_scale   (float64 tensors)
    linear_A, linear_bias
    lstm_hidden, lstm_layers, classifier_hidden, classifier_layers
    residual_state, classifier_state               (state dicts)

Only tensors, numbers and strings are stored, so loading works with weights_only=True.
"""

import pickle
from pathlib import Path
from typing import Union

import numpy as np
import torch
from sklearn.preprocessing import StandardScaler

from utils.constants import WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC
from utils.errors import WeightsFormatError
from utils.surrogate.networks import ConstraintClassifier, LinearModel, ResidualLSTM, SurrogateModel


def _tensor(values) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.float64).copy())


def _scaler(mean: torch.Tensor, scale: torch.Tensor) -> StandardScaler:
    scaler = StandardScaler()
    scaler.mean_ = mean.numpy().astype(np.float64)
    scaler.scale_ = scale.numpy().astype(np.float64)
    scaler.var_ = scaler.scale_**2
    scaler.n_features_in_ = len(scaler.mean_)
    scaler.n_samples_seen_ = 0
    return scaler


def save_weights(model: SurrogateModel, path: Union[str, Path]) -> None:
    """
    Writes every piece needed to rebuild identical predictions.

    Args:
        model (SurrogateModel): Trained model.
        path (str | Path): Target file (parent directories are created).
    """
    lstm = model.residual.lstm
    first_hidden = model.classifier.net[0]
    n_hidden_layers = sum(isinstance(m, torch.nn.Tanh) for m in model.classifier.net)
    payload = {
        "magic": WEIGHTS_MAGIC,
        "version": WEIGHTS_FORMAT_VERSION,
        "N": int(model.N),
        "n_theta": int(model.n_theta),
        "z_tol": float(model.z_tol),
        "theta_mean": _tensor(model.theta_scaler.mean_),
        "theta_scale": _tensor(model.theta_scaler.scale_),
        "y_mean": _tensor(model.y_scaler.mean_),
        "y_scale": _tensor(model.y_scaler.scale_),
        "linear_A": _tensor(model.linear.A),
        "linear_bias": float(model.linear.bias),
        "lstm_hidden": int(lstm.hidden_size),
        "lstm_layers": int(lstm.num_layers),
        "classifier_hidden": int(first_hidden.out_features),
        "classifier_layers": int(n_hidden_layers),
        "residual_state": model.residual.state_dict(),
        "classifier_state": model.classifier.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_weights(path: Union[str, Path]) -> SurrogateModel:
    """
    Rebuilds a SurrogateModel from a weights file.

    Raises:
        WeightsFormatError: If the file is missing, truncated, of another version or
            holds tensors whose shapes disagree with its header.
    """
    path = Path(path)
    if not path.exists():
        raise WeightsFormatError(f"Weights file not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, ValueError, OSError) as e:
        raise WeightsFormatError(f"Unreadable weights file {path}: {e}")

    if not isinstance(payload, dict) or payload.get("magic") != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path} is not a surrogate weights file")
    if payload.get("version") != WEIGHTS_FORMAT_VERSION:
        raise WeightsFormatError(
            f"{path} has format version {payload.get('version')}, expected {WEIGHTS_FORMAT_VERSION}"
        )

    try:
        N = int(payload["N"])
        n_theta = int(payload["n_theta"])
        if n_theta != 3 * (N + 1):
            raise WeightsFormatError(f"Header mismatch: n_theta={n_theta} but N={N}")
        for key in ("theta_mean", "theta_scale", "linear_A"):
            if tuple(payload[key].shape) != (n_theta,):
                raise WeightsFormatError(f"{key} has shape {tuple(payload[key].shape)}, expected ({n_theta},)")

        residual = ResidualLSTM(N, payload["lstm_hidden"], payload["lstm_layers"])
        residual.load_state_dict(payload["residual_state"])
        classifier = ConstraintClassifier(n_theta, payload["classifier_hidden"], payload["classifier_layers"])
        classifier.load_state_dict(payload["classifier_state"])
    except KeyError as e:
        raise WeightsFormatError(f"{path} is missing entry {e}")
    except RuntimeError as e:
        raise WeightsFormatError(f"Layer shapes in {path} disagree with its header: {e}")

    linear = LinearModel(A=payload["linear_A"].numpy().astype(np.float64), bias=float(payload["linear_bias"]))
    return SurrogateModel(
        N,
        linear,
        residual,
        classifier,
        _scaler(payload["theta_mean"], payload["theta_scale"]),
        _scaler(payload["y_mean"], payload["y_scale"]),
        float(payload["z_tol"]),
    )
