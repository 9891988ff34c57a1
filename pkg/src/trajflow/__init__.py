"""Conditional spline-flow trajectory forecasting with exact likelihoods."""

__version__ = "0.1.0"

from trajflow.errors import (
    CheckpointError,
    ConfigError,
    DatasetParseError,
    InvalidInputError,
    NumericError,
    TrajflowError,
)

__all__ = [
    "__version__",
    "TrajflowError",
    "InvalidInputError",
    "NumericError",
    "DatasetParseError",
    "CheckpointError",
    "ConfigError",
]
