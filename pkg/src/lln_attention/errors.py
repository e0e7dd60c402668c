"""Exception hierarchy shared by all modules."""


class AttentionError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AttentionError, ValueError):
    """Inputs have incompatible or invalid shapes."""


class DomainError(AttentionError, ValueError):
    """A value lies outside the domain of the operation (NaN, overflow, zero entry, ...)."""


class DegenerateError(AttentionError, ValueError):
    """The computation is well-formed but degenerate (zero variance, singular fit, ...)."""


class ConvergenceError(AttentionError, RuntimeError):
    """An iterative method failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CalibrationInfeasibleError(AttentionError, ValueError):
    """Moment matching cannot produce a positive sigma_tilde for the given inputs."""
