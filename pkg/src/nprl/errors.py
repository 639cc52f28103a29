"""Exception hierarchy shared by every nprl module."""


class NprlError(Exception):
    """Base class for all structured errors raised by the package."""


class ShapeError(NprlError, ValueError):
    """Operand dimensions do not agree."""


class NumericError(NprlError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class UndefinedCorrelationError(NumericError):
    """Correlation requested for a vector with zero variance."""


class GraphError(NprlError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar backward, consumed graph)."""


class ConfigError(NprlError, ValueError):
    """Invalid configuration, unknown key, or inconsistent settings."""


class CheckpointError(NprlError, IOError):
    """Checkpoint file is malformed, truncated, or fails its checksum."""


class EnvError(NprlError, ValueError):
    """Invalid environment request (unknown task, disallowed action, ...)."""


class DataError(NprlError, ValueError):
    """Dataset or assembly files violate their schema."""


class OutputError(NprlError, OSError):
    """An artifact could not be written."""
