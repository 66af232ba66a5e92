"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4.
"""


class EarlyRiskError(Exception):
    """Base class for all package errors."""


class ConfigError(EarlyRiskError):
    """Invalid configuration (bad field value, unknown key, ...)."""


class DataError(EarlyRiskError):
    """Invalid or inconsistent data on disk or in memory."""


class EvalError(EarlyRiskError):
    """An evaluation quantity is undefined for the given inputs."""


class DivergenceError(EarlyRiskError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        )


class ShapeError(ValueError, EarlyRiskError):
    """Tensor shapes are incompatible for the requested operation."""
