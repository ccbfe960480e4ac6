"""Exception types shared across the package."""


class QPVError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(QPVError, ValueError):
    """Invalid shapes, hyperparameters, or model layouts."""


class UsageError(QPVError, ValueError):
    """A call that is well-formed but not allowed in the current state."""


class EmptyInputError(QPVError, ValueError):
    """Input too short to produce any output."""


class UndefinedResultError(QPVError, ValueError):
    """A metric with no valid samples to average over."""


class FormatError(QPVError, ValueError):
    """Malformed or unsupported file contents."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
