"""Exception hierarchy shared by the library and the command line."""


class SeldivError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SeldivError, ValueError):
    pass


class StateError(SeldivError, RuntimeError):
    """An object was used before a required preparation step."""


class MissingConditionError(SeldivError, KeyError):
    """A condition key is absent from a diversity table."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class DatasetFileError(SeldivError, IOError):
    pass


class MalformedFileError(DatasetFileError):
    """Truncated file or unparsable header."""


class ChecksumError(DatasetFileError):
    pass


class ValidationError(DatasetFileError):
    """Header and payload disagree (kind, shape or dtype)."""


class CheckpointError(SeldivError, IOError):
    pass


class ConfigMismatchError(CheckpointError):
    """A checkpoint was produced by a different training configuration."""


class ConfigError(SeldivError, ValueError):
    pass


class DivergenceError(SeldivError, RuntimeError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step
