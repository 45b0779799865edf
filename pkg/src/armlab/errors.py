"""Exception types shared across the package."""


class ArmlabError(Exception):
    """Base class for all armlab errors."""


class DomainError(ArmlabError, ValueError):
    """A numeric argument lies outside the mathematically valid domain."""


class GeometryError(ArmlabError, ValueError):
    """An event geometry violates its family's precondition chain."""


class FitError(ArmlabError, RuntimeError):
    """A power-law fit cannot be performed (too few usable points)."""


class EstimationError(ArmlabError, RuntimeError):
    """A Monte Carlo estimate is undefined (e.g. all replicas indeterminate)."""
