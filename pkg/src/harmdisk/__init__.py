"""Harmonic maps into the hyperbolic disk by discrete energy minimization.

The package builds structured meshes on planar and glued domains, minimizes
the Dirichlet energy of maps into the Poincare disk, and analyzes the
resulting Hopf differentials (Laurent spectra, zero divisors, foliations).
Higher-level drivers reproduce the polynomial-growth catenoid analogues:
single-ended maps with ideal-polygon images, annulus doublings, and a
degenerating family over split tori.
"""

__version__ = "0.1.0"

from .errors import (
    ConstructionError,
    DivisorError,
    DomainError,
    HarmdiskError,
    InvalidParameterError,
    InvalidRegionError,
    NonConvergenceError,
    SuspensionRefusedError,
    VerificationError,
)

__all__ = [
    "ConstructionError",
    "DivisorError",
    "DomainError",
    "HarmdiskError",
    "InvalidParameterError",
    "InvalidRegionError",
    "NonConvergenceError",
    "SuspensionRefusedError",
    "VerificationError",
    "__version__",
]
