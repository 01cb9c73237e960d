"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes: invalid parameters -> 2,
solver non-convergence -> 3, verification failure -> 4, I/O -> 5.
"""


class HarmdiskError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(HarmdiskError, ValueError):
    """Caller passed parameters outside an operation's precondition."""


class DomainError(InvalidParameterError):
    """A point lies outside the open unit disk (or other geometric domain)."""


class InvalidRegionError(InvalidParameterError):
    """A requested region is not a union of whole mesh triangles."""


class ConstructionError(HarmdiskError):
    """Mesh construction produced an inconsistent complex (e.g. open fan)."""


class NonConvergenceError(HarmdiskError):
    """An iterative solve stopped without meeting its tolerance."""


class VerificationError(HarmdiskError):
    """A structural invariant check failed on computed data."""


class DivisorError(VerificationError):
    """Zero counting failed (winding contour kept crossing zeros)."""


class SuspensionRefusedError(VerificationError):
    """The measured Hopf field does not admit a square root (odd multiplicity
    or nontrivial sign holonomy); carries the divisor report."""

    def __init__(self, message, divisor=None):
        super().__init__(message)
        self.divisor = divisor
