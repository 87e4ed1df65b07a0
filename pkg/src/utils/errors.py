"""
Exception hierarchy shared by the plant, surrogate, optimizer and control engines.

Engines raise these; the command-line front-end catches CascadeError, logs it and exits.
"""

from typing import Optional


class CascadeError(Exception):
    """Base class for every error raised by this project."""


class DomainError(CascadeError, ValueError):
    """An argument lies outside the physical domain (negative flow, concentration, volume)."""


class ConfigError(CascadeError):
    """A configuration file is missing, unreadable or fails validation."""


class AlgebraicSolveError(CascadeError):
    """The per-stage interface equilibrium Newton iteration did not converge."""

    def __init__(self, stage: int, residual: float, iterations: int):
        self.stage = stage
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Interface equilibrium did not converge at stage {stage} "
            f"after {iterations} iterations (|g|={residual:.3e})"
        )


class IntegrationError(CascadeError):
    """The implicit integrator failed even at the smallest allowed sub-step."""


class SteadyStateError(CascadeError):
    """Neither Newton continuation nor long-horizon integration reached a steady state."""


class InfeasibleTargetError(CascadeError):
    """The requested set point cannot be reached inside the input bounds."""

    def __init__(self, y_set: float, nearest_u: float, y_range: tuple):
        self.y_set = y_set
        self.nearest_u = nearest_u
        self.y_range = y_range
        super().__init__(
            f"y_set={y_set:.6g} outside achievable range "
            f"[{y_range[0]:.6g}, {y_range[1]:.6g}]; nearest bound u={nearest_u:.6g}"
        )


class InfeasibleProblemError(CascadeError):
    """The particle swarm could not place a single particle in the feasible set."""


class TrainingDivergedError(CascadeError):
    """Training loss blew up beyond the divergence threshold."""

    def __init__(self, epoch: int, loss: float, initial_loss: float):
        self.epoch = epoch
        self.loss = loss
        self.initial_loss = initial_loss
        super().__init__(
            f"Training diverged at epoch {epoch}: loss {loss:.4e} > 10x initial {initial_loss:.4e}"
        )


class SingleClassError(CascadeError):
    """Classifier data holds a single label; the excitation plan must reach the constraint."""


class DimensionMismatchError(CascadeError, ValueError):
    """An input vector does not match the model's expected dimension."""


class WeightsFormatError(CascadeError):
    """A weights file is truncated, of the wrong version or has inconsistent shapes."""


class ScenarioAbortedError(CascadeError):
    """A closed-loop run stopped on an engine error; the partial record was persisted."""

    def __init__(self, step: int, cause: Exception, record_path: Optional[str] = None):
        self.step = step
        self.cause = cause
        self.record_path = record_path
        super().__init__(f"Scenario aborted at step {step}: {cause} (partial record: {record_path})")
