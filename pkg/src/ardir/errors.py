"""Exception types shared across the toolkit."""


class ArdirError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(ArdirError, ValueError):
    """Invalid configuration: bad hyperparameter, shape mismatch, rejected combo."""


class DatasetError(ArdirError, RuntimeError):
    """Dataset source missing, corrupt, or an empty split was requested."""


class NonFiniteError(ArdirError, RuntimeError):
    """A loss or gradient became NaN/Inf; carries the offending coordinates."""

    def __init__(self, message: str, *, epoch: int | None = None, batch: int | None = None):
        if epoch is not None or batch is not None:
            message = f"{message} (epoch={epoch}, batch={batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
