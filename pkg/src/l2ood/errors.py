"""Exception hierarchy shared by every module."""


class L2OODError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeError(L2OODError, ValueError):
    pass


class NotSymmetricError(L2OODError, ValueError):
    pass


class LabelError(L2OODError, ValueError):
    pass


class EmptyClassError(L2OODError, ValueError):
    pass


class DegenerateGeometryError(L2OODError, ValueError):
    """Raised when a metric is undefined for the given configuration."""


class DivergenceError(L2OODError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class ScoringError(L2OODError, ValueError):
    pass


class DatasetFormatError(L2OODError, ValueError):
    pass


class CheckpointError(L2OODError, ValueError):
    pass


class ConfigError(L2OODError, ValueError):
    pass


class DegenerateGeometryWarning(UserWarning):
    """Emitted when a metric falls back to a conventional value (e.g. a zero pseudoinverse)."""
