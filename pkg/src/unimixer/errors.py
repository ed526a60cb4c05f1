"""Exception types shared across the package."""


class UniMixerError(Exception):
    """Base class for all package errors."""


class DimensionError(UniMixerError, ValueError):
    """Shapes or lengths do not conform."""


class ConstraintError(UniMixerError, ValueError):
    """A structural constraint (e.g. head count == token count) is violated."""


class RangeError(UniMixerError, ValueError):
    """A value is outside the numerically safe range."""


class PreconditionError(UniMixerError, ValueError):
    """An operation's documented precondition does not hold."""


class ConfigError(UniMixerError, ValueError):
    """Invalid or inconsistent configuration. CLI exit code 2."""


class UndefinedMetricError(UniMixerError, ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class TrainingDivergedError(UniMixerError, RuntimeError):
    """Loss became non-finite during training. CLI exit code 4."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")
