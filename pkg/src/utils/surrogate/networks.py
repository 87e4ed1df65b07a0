"""
The surrogate predictor: y(k+1) = A theta + b + LSTM(theta), zbar(k+1) = 1{classifier(theta) >= 0.5}.

Everything inside the networks lives in standardised coordinates; SurrogateModel owns the
scalers and exposes physical-unit predictions. All tensors are float64 on CPU.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
from sklearn.preprocessing import StandardScaler

from utils.errors import DimensionMismatchError

torch.set_default_dtype(torch.float64)
torch.use_deterministic_algorithms(True)


def _uniform_fan_in_(module: nn.Module) -> None:
    """Uniform initialisation in +-1/sqrt(fan_in) for every weight and bias."""
    for name, param in module.named_parameters():
        if isinstance(module, nn.LSTM):
            fan_in = module.hidden_size
        else:
            fan_in = param.shape[-1] if param.dim() > 1 else module.weight.shape[1]
        bound = 1.0 / math.sqrt(fan_in)
        nn.init.uniform_(param, -bound, bound)


@dataclass
class LinearModel:
    """Linear stage in standardised coordinates: y_n = A . theta_n + bias."""

    A: np.ndarray
    bias: float

    def __call__(self, theta_norm: np.ndarray) -> np.ndarray:
        return np.asarray(theta_norm) @ self.A + self.bias


class ResidualLSTM(nn.Module):
    """
    Stacked LSTM over the N+1 time steps of theta (3 signals per step) with a scalar head.
    """

    def __init__(self, N: int, hidden: int = 10, layers: int = 2):
        super().__init__()
        self.N = N
        self.lstm = nn.LSTM(input_size=3, hidden_size=hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden, 1)
        _uniform_fan_in_(self.lstm)
        _uniform_fan_in_(self.head)

    def forward(self, theta_norm: torch.Tensor) -> torch.Tensor:
        # (batch, 3 * (N+1)) -> (batch, N+1, 3): one time step per lag, signals as features
        seq = theta_norm.reshape(-1, 3, self.N + 1).transpose(1, 2)
        out, _ = self.lstm(seq)
        return self.head(out[:, -1, :]).squeeze(-1)


class ConstraintClassifier(nn.Module):
    """Feed-forward classifier; forward returns logits, probabilities come from a sigmoid."""

    def __init__(self, n_theta: int, hidden: int = 50, layers: int = 2):
        super().__init__()
        blocks = []
        width = n_theta
        for _ in range(layers):
            linear = nn.Linear(width, hidden)
            _uniform_fan_in_(linear)
            blocks += [linear, nn.Tanh()]
            width = hidden
        out = nn.Linear(width, 1)
        _uniform_fan_in_(out)
        self.net = nn.Sequential(*blocks, out)

    def forward(self, theta_norm: torch.Tensor) -> torch.Tensor:
        return self.net(theta_norm).squeeze(-1)

    def probability(self, theta_norm: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward(theta_norm))


class SurrogateModel:
    """
    Linear stage + recurrent residual + constraint classifier, with the scalers that map
    physical theta and y to the standardised coordinates the networks were trained in.
    """

    def __init__(
        self,
        N: int,
        linear: LinearModel,
        residual: ResidualLSTM,
        classifier: ConstraintClassifier,
        theta_scaler: StandardScaler,
        y_scaler: StandardScaler,
        z_tol: float = float("nan"),
    ):
        self.N = N
        self.linear = linear
        self.residual = residual.eval()
        self.classifier = classifier.eval()
        self.theta_scaler = theta_scaler
        self.y_scaler = y_scaler
        self.z_tol = z_tol

    @property
    def n_theta(self) -> int:
        return 3 * (self.N + 1)

    def normalize_theta(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.theta_scaler.mean_) / self.theta_scaler.scale_

    def denormalize_y(self, y_norm: np.ndarray) -> np.ndarray:
        return y_norm * self.y_scaler.scale_[0] + self.y_scaler.mean_[0]

    def _check(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.n_theta:
            raise DimensionMismatchError(f"theta has {theta.shape[1]} entries, model expects {self.n_theta}")
        return theta

    def predict_batch(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Physical-unit predictions for a batch of theta rows.

        Returns:
            tuple: (y_next, p_safe) where p_safe is the classifier probability of zbar = 1.
        """
        theta_norm = self.normalize_theta(self._check(theta))
        with torch.no_grad():
            tensor = torch.as_tensor(theta_norm, dtype=torch.float64)
            residual = self.residual(tensor).numpy()
            p_safe = self.classifier.probability(tensor).numpy()
        y_norm = self.linear(theta_norm) + residual
        return self.denormalize_y(y_norm), p_safe


def predict_y(model: SurrogateModel, theta: np.ndarray) -> float:
    """One-step-ahead output prediction for a single physical theta vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise DimensionMismatchError("predict_y expects a single theta vector")
    y, _ = model.predict_batch(theta)
    return float(y[0])


def predict_zbar(model: SurrogateModel, theta: np.ndarray) -> int:
    """1 when the classifier expects the raffinate constraint to hold at k+1."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise DimensionMismatchError("predict_zbar expects a single theta vector")
    _, p_safe = model.predict_batch(theta)
    return int(p_safe[0] >= 0.5)


def rollout(model, y_seed: np.ndarray, u_path: np.ndarray, q_path: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Recursive multi-step prediction, feeding each predicted y back into the next theta.

    Args:
        model: Anything with `N` and `predict_batch(theta) -> (y, p_safe)`.
        y_seed (np.ndarray): (batch, N+1) or (N+1,) measured outputs ending at time k.
        u_path (np.ndarray): (batch, N+H) inputs from k-N to k+H-1.
        q_path (np.ndarray): (batch, N+H) disturbances over the same span.

    Returns:
        tuple: (y_hat, zbar), each (batch, H): predictions for k+1 .. k+H.
    """
    N = model.N
    y_hist = np.atleast_2d(np.asarray(y_seed, dtype=float))
    u_path = np.atleast_2d(np.asarray(u_path, dtype=float))
    q_path = np.atleast_2d(np.asarray(q_path, dtype=float))
    batch = max(len(y_hist), len(u_path), len(q_path))
    y_hist = np.broadcast_to(y_hist, (batch, y_hist.shape[1]))
    u_path = np.broadcast_to(u_path, (batch, u_path.shape[1]))
    q_path = np.broadcast_to(q_path, (batch, q_path.shape[1]))
    if y_hist.shape[1] != N + 1 or u_path.shape[1] != q_path.shape[1] or u_path.shape[1] <= N:
        raise DimensionMismatchError("rollout needs N+1 outputs and equal-length (N+H) input paths")

    H = u_path.shape[1] - N
    y_hat = np.empty((batch, H))
    zbar = np.empty((batch, H), dtype=int)
    window = y_hist.copy()
    for j in range(H):
        theta = np.hstack([window, u_path[:, j : j + N + 1], q_path[:, j : j + N + 1]])
        y_next, p_safe = model.predict_batch(theta)
        y_hat[:, j] = y_next
        zbar[:, j] = p_safe >= 0.5
        window = np.hstack([window[:, 1:], y_next[:, None]])
    return y_hat, zbar
