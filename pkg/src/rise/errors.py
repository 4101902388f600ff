"""Exception types shared across the package."""


class RiseError(Exception):
    """Base class for all package-specific errors."""


class DimError(RiseError, ValueError):
    """Vector or matrix dimensions do not match."""


class DegenerateVector(RiseError, ValueError):
    """An operation requiring nonzero norm received a zero vector."""


class EmptyInput(RiseError, ValueError):
    """A non-empty collection was required."""


class ConfigError(RiseError, ValueError):
    """Invalid configuration value or combination."""


class FormatError(RiseError, ValueError):
    """Malformed file content; message names the offending record."""


class IoError(RiseError, OSError):
    """File could not be read or written."""


class TrainingDiverged(RiseError, RuntimeError):
    """Loss or parameters became non-finite during training."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
