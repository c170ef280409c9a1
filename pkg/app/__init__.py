"""
Space-time discontinuous Galerkin solver for parabolic HJB equations
with Cordes coefficients.
"""

__version__ = "1.0.0"
