"""
Exception hierarchy for the space-time DG HJB solver.
"""

from typing import List, Optional


class HJBError(Exception):
    """Base class for all solver errors."""


class ConfigError(HJBError, ValueError):
    """Invalid manifest, parameter or memory guard."""


class ArgumentError(HJBError, ValueError):
    """Invalid input to an analysis helper."""


class MeshTopologyError(HJBError):
    """Facets of neighbouring elements do not match up to 1-irregularity."""


class DataError(HJBError, ValueError):
    """Problem data violates symmetry or uniform ellipticity."""


class CordesViolationError(HJBError):
    """The sampled Cordes slack is not positive."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SlabSolveError(HJBError):
    """A time slab could not be solved."""

    def __init__(
        self,
        message: str,
        slab: Optional[int] = None,
        residuals: Optional[List[float]] = None,
        iterations: int = 0,
    ):
        super().__init__(message)
        self.slab = slab
        self.residuals = list(residuals or [])
        self.iterations = iterations
