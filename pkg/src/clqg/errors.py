"""Exception types shared across the package."""


class ClqgError(Exception):
    """Base class for all package errors."""


class DomainError(ClqgError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(ClqgError, ValueError):
    """A configuration file or block failed schema validation.

    ``field`` carries the dotted path of the offending key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class SynthesisError(ClqgError, RuntimeError):
    """Gaussian field synthesis failed (e.g. non-positive-definite embedding)."""


class HorizonExceededError(ClqgError, ValueError):
    """A requested Liouville time lies beyond the computed clock range."""


class ResourceCapError(ClqgError, RuntimeError):
    """A configured resource cap (path horizon, iterations) was hit."""


class NumericError(ClqgError, RuntimeError):
    """A numeric routine failed to reach its required tolerance."""


class CacheError(ClqgError, RuntimeError):
    """A cache file is missing, corrupt, or fails its checksum."""
