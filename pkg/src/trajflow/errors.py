"""Exception hierarchy shared across the package."""


class TrajflowError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(TrajflowError, ValueError):
    """An argument violates a documented precondition."""


class NumericError(TrajflowError, ArithmeticError):
    """A computation produced non-finite or otherwise impossible values."""


class DatasetParseError(TrajflowError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CheckpointError(TrajflowError):
    """A checkpoint file is corrupt or inconsistent with its config."""


class ConfigError(TrajflowError):
    """A run configuration file is invalid."""
