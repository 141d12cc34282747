"""Exception hierarchy shared across the package."""


class GarbError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GarbError):
    """Invalid configuration value or unusable combination of settings."""


class ContractError(GarbError):
    """Caller violated an operation precondition (shape, range, format)."""


class TrainingError(GarbError):
    """Training diverged or otherwise cannot continue."""


class NumericalError(GarbError):
    """Non-finite values encountered during computation."""


class CheckpointError(GarbError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""
