"""Learnable feature-mixing blocks with a desk-scale scaling-law harness."""

from .backends import ACTIVE_BACKEND
from .errors import (ConfigError, ConstraintError, DimensionError,
                     PreconditionError, RangeError, TrainingDivergedError,
                     UndefinedMetricError, UniMixerError)

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_BACKEND",
    "UniMixerError",
    "DimensionError",
    "ConstraintError",
    "RangeError",
    "PreconditionError",
    "ConfigError",
    "UndefinedMetricError",
    "TrainingDivergedError",
    "__version__",
]
