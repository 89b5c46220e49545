"""Exception types shared across modules."""

from .acoustics import DomainError


class ConfigurationError(ValueError):
    """Invalid parameters (rates, windows, bands, databases)."""


class DataError(ValueError):
    """Input data does not satisfy a stage's preconditions."""


class SaturationError(DomainError):
    """Echo amplitude reaches the incident reference (total reflection)."""


__all__ = ["ConfigurationError", "DataError", "DomainError", "SaturationError"]
