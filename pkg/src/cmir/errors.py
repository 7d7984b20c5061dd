"""Exception hierarchy shared across the package."""


class CmirError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CmirError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(CmirError):
    """Invalid hyperparameter or configuration value."""


class ContractError(CmirError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class DataError(CmirError):
    """Malformed data, e.g. a class id outside the valid range."""


class EmptyInputError(CmirError):
    """An operation received an empty tensor or an empty directory."""


class CheckpointError(CmirError):
    """Checkpoint file is missing, truncated, or has a version mismatch."""
