"""Spoken language identification benchmark toolkit.

MFCC extraction, dataset construction and auditing, a 1-D CNN baseline with
hand-written backpropagation, evaluation and significance testing.
"""

from ._accel import backend
from .errors import ConfigError, DataError, NumericError, ResourceError, SlidError, UsageError

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend",
    "SlidError",
    "ConfigError",
    "UsageError",
    "ResourceError",
    "DataError",
    "NumericError",
]
