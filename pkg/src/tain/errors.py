"""Exception types shared across the package."""


class TainError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TainError, ValueError):
    """Operands have incompatible or invalid shapes."""


class GraphError(TainError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, double sweep, ...)."""


class ConfigError(TainError, ValueError):
    """Invalid model / training / augmentation configuration."""


class DataError(TainError, ValueError):
    """Dataset loading or augmentation failure."""


class TrainingError(TainError, RuntimeError):
    """Training aborted (non-finite loss, corrupt checkpoint, ...)."""
