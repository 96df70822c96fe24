"""Exception hierarchy shared across the package."""


class DeepKrigingError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DeepKrigingError, ValueError):
    """Invalid configuration or parameter set."""


class ArgumentError(DeepKrigingError, ValueError):
    """Invalid call arguments (shapes, ranges)."""


class NumericError(DeepKrigingError, ArithmeticError):
    """A numerical procedure failed (e.g. Cholesky after jitter escalation)."""

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


class SingularityError(NumericError):
    """Design matrix is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class TrainingDivergenceError(NumericError):
    """Loss became non-finite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(DeepKrigingError):
    """A model file is corrupt or not a model file."""


class IncompatibleVersionError(ModelFormatError):
    """A model file was written by an incompatible format version."""


class FitError(NumericError):
    """Likelihood optimization produced no valid iterate."""
