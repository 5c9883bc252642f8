"""Exception taxonomy shared across the package."""


class OpsdLabError(Exception):
    """Base class for package errors."""


class DimensionMismatchError(OpsdLabError, ValueError):
    """Inputs that must share a shape do not."""


class DomainError(OpsdLabError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateInputError(OpsdLabError, ValueError):
    """An input is empty where a nonempty one is required."""


class ContextLengthError(OpsdLabError, ValueError):
    """A token sequence exceeds the policy's maximum context length."""


class UsageError(OpsdLabError, RuntimeError):
    """An operation was invoked out of order (e.g. backward before forward)."""


class NumericalAbort(OpsdLabError, RuntimeError):
    """Training produced a non-finite loss; carries a diagnostic payload."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class MissingArtifactError(OpsdLabError, FileNotFoundError):
    """A required upstream artifact (e.g. baseline checkpoint) is absent."""


class ConfigError(OpsdLabError, ValueError):
    """A manifest or config file is malformed or inconsistent."""
