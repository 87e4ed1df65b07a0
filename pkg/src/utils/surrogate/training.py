"""
Training of the three surrogate stages: least squares, then the recurrent residual on the
linear errors, then the constraint classifier.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
from sklearn.linear_model import LinearRegression, Ridge
from torch.utils.data import DataLoader, TensorDataset

from utils.errors import SingleClassError, TrainingDivergedError
from utils.logging_utils import MasterLogger
from utils.surrogate.dataset import SPLIT_NAMES, Dataset
from utils.surrogate.networks import ConstraintClassifier, LinearModel, ResidualLSTM, SurrogateModel

DIVERGENCE_FACTOR = 10.0


@dataclass
class TrainingReport:
    n_samples: int = 0
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    ridge_used: bool = False
    linear_train_mse: float = float("nan")
    zero_model_mse: float = float("nan")
    residual_variance: float = float("nan")
    output_variance: float = float("nan")
    residual_losses: List[float] = field(default_factory=list)
    classifier_losses: List[float] = field(default_factory=list)
    val_mae_linear: float = float("nan")
    val_mae: float = float("nan")
    test_mae: float = float("nan")
    val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "ridge_used": self.ridge_used,
            "linear_train_mse": self.linear_train_mse,
            "zero_model_mse": self.zero_model_mse,
            "residual_variance": self.residual_variance,
            "output_variance": self.output_variance,
            "residual_losses": list(self.residual_losses),
            "classifier_losses": list(self.classifier_losses),
            "val_mae_linear": self.val_mae_linear,
            "val_mae": self.val_mae,
            "test_mae": self.test_mae,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
        }


def _loader(features: np.ndarray, targets: np.ndarray, batch: int, seed: int) -> DataLoader:
    generator = torch.Generator().manual_seed(seed)
    data = TensorDataset(torch.as_tensor(features, dtype=torch.float64), torch.as_tensor(targets, dtype=torch.float64))
    return DataLoader(data, batch_size=batch, shuffle=True, generator=generator)


def _optimizer(params, lr: float, kind: str, momentum: float):
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    return torch.optim.SGD(params, lr=lr, momentum=momentum)


def train_linear(dataset: Dataset, ridge_alpha: float = 1e-8, report: Optional[TrainingReport] = None) -> LinearModel:
    """
    Least-squares fit of the linear stage on the standardised training split.

    Falls back to a ridge fit when the design matrix is rank deficient.

    Args:
        dataset (Dataset): Dataset (normalisation is fitted here when missing).
        ridge_alpha (float): Regulariser of the fallback.
        report (TrainingReport, optional): Receives the fit diagnostics.

    Returns:
        LinearModel: Coefficients in standardised coordinates.
    """
    logger = MasterLogger.get_instance()
    theta, y, _ = dataset.normalized("train")
    if len(y) < theta.shape[1] + 1:
        raise ValueError(f"train_linear needs at least {theta.shape[1] + 1} samples, got {len(y)}")

    centred = theta - theta.mean(axis=0)
    rank = np.linalg.matrix_rank(centred)
    ridge = rank < theta.shape[1]
    if ridge:
        logger.warning(f"Linear design matrix has rank {rank} < {theta.shape[1]}; using ridge alpha={ridge_alpha}")
        fit = Ridge(alpha=ridge_alpha).fit(theta, y)
    else:
        fit = LinearRegression().fit(theta, y)
    model = LinearModel(A=np.asarray(fit.coef_, dtype=float), bias=float(fit.intercept_))

    if report is not None:
        errors = y - model(theta)
        report.ridge_used = ridge
        report.linear_train_mse = float(np.mean(errors**2))
        report.zero_model_mse = float(np.mean(y**2))
        report.residual_variance = float(np.var(errors))
        report.output_variance = float(np.var(y))
    return model


def _mean_loss(net: nn.Module, loss_fn, features: torch.Tensor, targets: torch.Tensor) -> float:
    with torch.no_grad():
        return float(loss_fn(net(features), targets))


def _fit(
    net: nn.Module,
    loss_fn,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    lr: float,
    batch: int,
    seed: int,
    optimizer: str,
    momentum: float,
    clip_norm: float,
    label: str,
) -> List[float]:
    logger = MasterLogger.get_instance()
    torch.manual_seed(seed)
    loader = _loader(features, targets, batch, seed)
    opt = _optimizer(net.parameters(), lr, optimizer, momentum)
    all_x = torch.as_tensor(features, dtype=torch.float64)
    all_t = torch.as_tensor(targets, dtype=torch.float64)
    initial = _mean_loss(net, loss_fn, all_x, all_t)
    losses = []

    for epoch in range(1, epochs + 1):
        net.train()
        total, count = 0.0, 0
        for xb, tb in loader:
            opt.zero_grad()
            loss = loss_fn(net(xb), tb)
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), clip_norm)
            opt.step()
            total += float(loss) * len(xb)
            count += len(xb)
        epoch_loss = total / count
        losses.append(epoch_loss)
        logger.info(f"[{label}] epoch {epoch}/{epochs} loss={epoch_loss:.6e}")
        if not np.isfinite(epoch_loss) or epoch_loss > DIVERGENCE_FACTOR * max(initial, 1e-30):
            raise TrainingDivergedError(epoch, epoch_loss, initial)
    net.eval()
    return losses


def train_residual_net(
    dataset: Dataset,
    linear: LinearModel,
    epochs: int,
    lr: float,
    batch: int,
    hidden: int = 10,
    layers: int = 2,
    seed: int = 0,
    optimizer: str = "sgd",
    momentum: float = 0.0,
    clip_norm: float = 1.0,
    report: Optional[TrainingReport] = None,
) -> ResidualLSTM:
    """
    Trains the recurrent network on the linear-stage errors e = y_n - (A theta_n + b).

    Returns:
        ResidualLSTM: Trained network (eval mode).

    Raises:
        TrainingDivergedError: If an epoch loss exceeds ten times the initial loss.
    """
    theta, y, _ = dataset.normalized("train")
    errors = y - linear(theta)
    torch.manual_seed(seed)
    net = ResidualLSTM(dataset.N, hidden, layers)
    losses = _fit(
        net, nn.MSELoss(), theta, errors, epochs, lr, batch, seed, optimizer, momentum, clip_norm, "residual"
    )

    if report is not None:
        report.residual_losses = losses
        for name in ("val", "test"):
            theta_s, y_s, _ = dataset.normalized(name)
            if not len(y_s):
                continue
            with torch.no_grad():
                residual = net(torch.as_tensor(theta_s)).numpy()
            mae = float(np.mean(np.abs(linear(theta_s) + residual - y_s)))
            if name == "val":
                report.val_mae = mae
                report.val_mae_linear = float(np.mean(np.abs(linear(theta_s) - y_s)))
            else:
                report.test_mae = mae
    return net


def train_classifier(
    dataset: Dataset,
    epochs: int,
    lr: float,
    batch: int,
    hidden: int = 50,
    layers: int = 2,
    seed: int = 0,
    optimizer: str = "sgd",
    momentum: float = 0.0,
    clip_norm: float = 1.0,
    report: Optional[TrainingReport] = None,
) -> ConstraintClassifier:
    """
    Cross-entropy training of the raffinate-constraint classifier.

    Raises:
        SingleClassError: If the training labels hold a single class.
    """
    theta, _, zbar = dataset.normalized("train")
    if len(np.unique(zbar)) < 2:
        raise SingleClassError(
            "Classifier training data holds a single label; extend the excitation plan "
            "beyond the saturation flow (raise saturated_share) so the constraint is crossed"
        )
    torch.manual_seed(seed)
    net = ConstraintClassifier(theta.shape[1], hidden, layers)
    losses = _fit(
        net,
        nn.BCEWithLogitsLoss(),
        theta,
        zbar.astype(float),
        epochs,
        lr,
        batch,
        seed,
        optimizer,
        momentum,
        clip_norm,
        "classifier",
    )

    if report is not None:
        report.classifier_losses = losses
        for name in ("val", "test"):
            theta_s, _, zbar_s = dataset.normalized(name)
            if not len(zbar_s):
                continue
            with torch.no_grad():
                predicted = (net.probability(torch.as_tensor(theta_s)).numpy() >= 0.5).astype(int)
            accuracy = float(np.mean(predicted == zbar_s))
            if name == "val":
                report.val_accuracy = accuracy
            else:
                report.test_accuracy = accuracy
    return net


def gradient_check(
    net: nn.Module,
    theta: torch.Tensor,
    target: torch.Tensor,
    n_checks: int = 20,
    eps: float = 1e-6,
    seed: int = 0,
) -> float:
    """
    Compares backpropagated gradients with central finite differences on random entries.

    Args:
        net (nn.Module): Network under test (float64).
        theta (torch.Tensor): Input batch.
        target (torch.Tensor): Targets for an MSE loss.
        n_checks (int): Number of random parameter entries checked.
        eps (float): Finite-difference half step.
        seed (int): Seed of the entry selection.

    Returns:
        float: Largest relative error over the checked entries.
    """
    loss_fn = nn.MSELoss()
    net.zero_grad()
    loss_fn(net(theta), target).backward()
    params = [p for p in net.parameters() if p.requires_grad]
    rng = np.random.default_rng(seed)
    worst = 0.0

    for _ in range(n_checks):
        param = params[int(rng.integers(len(params)))]
        index = tuple(int(rng.integers(dim)) for dim in param.shape)
        analytic = float(param.grad[index])
        with torch.no_grad():
            original = float(param[index])
            param[index] = original + eps
            plus = float(loss_fn(net(theta), target))
            param[index] = original - eps
            minus = float(loss_fn(net(theta), target))
            param[index] = original
        numeric = (plus - minus) / (2.0 * eps)
        scale = max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def fit_surrogate(dataset: Dataset, training, report: Optional[TrainingReport] = None) -> SurrogateModel:
    """
    Runs the three training stages with a TrainingConfig and assembles the model.
    """
    report = report if report is not None else TrainingReport()
    dataset.fit_normalization()
    report.n_samples = len(dataset)
    report.n_train, report.n_val, report.n_test = (int(np.sum(dataset.split == s)) for s in SPLIT_NAMES)

    linear = train_linear(dataset, training.ridge_alpha, report)
    common = dict(
        lr=training.lr,
        batch=training.batch_size,
        seed=training.seed,
        optimizer=training.optimizer,
        momentum=training.momentum,
        clip_norm=training.clip_norm,
        report=report,
    )
    residual = train_residual_net(
        dataset,
        linear,
        training.epochs_residual,
        hidden=training.lstm_hidden,
        layers=training.lstm_layers,
        **common,
    )
    classifier = train_classifier(
        dataset,
        training.epochs_classifier,
        hidden=training.classifier_hidden,
        layers=training.classifier_layers,
        **common,
    )
    return SurrogateModel(
        dataset.N, linear, residual, classifier, dataset.theta_scaler, dataset.y_scaler, dataset.z_tol
    )
