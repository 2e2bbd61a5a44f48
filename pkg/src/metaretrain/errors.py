"""Exception types shared across the package."""


class MetaRetrainError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MetaRetrainError):
    """Model or pipeline wiring is structurally invalid (e.g. shape mismatch)."""


class ValidationError(MetaRetrainError):
    """An argument value violates a documented precondition."""


class UsageError(MetaRetrainError):
    """API called out of order (backward without forward, step without grads)."""


class NonFiniteError(MetaRetrainError):
    """A NaN or Inf appeared in a computation."""


class ParseError(MetaRetrainError):
    """A dataset file does not match its binary format."""


class CheckpointError(MetaRetrainError):
    """A checkpoint file is missing, corrupt, or inconsistent."""
