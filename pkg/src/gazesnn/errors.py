"""Exception types shared across the package."""


class GazeSnnError(Exception):
    """Base class for all package errors."""


class DimensionError(GazeSnnError, ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ContractError(GazeSnnError, ValueError):
    """Raised when a call violates an operation's precondition."""


class ConfigError(GazeSnnError, ValueError):
    """Raised for invalid configuration files or CLI arguments."""


class TrainingAbort(GazeSnnError, RuntimeError):
    """Raised when training must stop (non-finite losses or gradients)."""
