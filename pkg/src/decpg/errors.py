"""Exception taxonomy shared across the package."""


class DecpgError(Exception):
    """Base class for package errors."""


class InputError(DecpgError, ValueError):
    """Caller passed values outside an operation's domain."""


class ShapeError(DecpgError, ValueError):
    """Array shapes incompatible with the operation."""


class StateError(DecpgError, RuntimeError):
    """Operation called in the wrong object state (e.g. backward before forward)."""


class DataError(DecpgError, ValueError):
    """Stored episode/transition data violates what the operation requires."""


class ConfigError(DecpgError, ValueError):
    """Invalid or unsupported run configuration."""


class TrainingError(DecpgError, RuntimeError):
    """Numerical failure during training (non-finite gradients or losses)."""


class UnsupportedOperation(DecpgError, TypeError):
    """Operation not defined for this action-space kind."""
