"""Exception types shared across the package."""

from .tape import SingularCovarianceError

__all__ = [
    "SingularCovarianceError",
    "TrainingDivergedError",
    "ElboDivergedError",
    "ResidualEvalError",
    "SolverFailureError",
    "LiftMismatchError",
    "DegenerateTruthError",
    "ConfigError",
]


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradient; carries the step where it happened."""

    def __init__(self, message, step=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class ElboDivergedError(TrainingDivergedError):
    """Non-finite ELBO term, with a per-component breakdown."""

    def __init__(self, message, components=None, step=None):
        super().__init__(message, step=step)
        self.components = dict(components or {})


class ResidualEvalError(RuntimeError):
    """Non-finite intermediate while evaluating a PDE residual."""


class SolverFailureError(RuntimeError):
    """Reference solver failed to converge."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class LiftMismatchError(ValueError):
    """A boundary lift violates a declared boundary/initial condition."""


class DegenerateTruthError(ValueError):
    """Ground-truth vector has zero norm; normalized errors undefined."""


class ConfigError(ValueError):
    """Bad configuration file or unknown key."""
