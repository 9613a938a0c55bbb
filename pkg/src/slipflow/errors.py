"""Error types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
tests can assert on the exact condition.  All inherit from SlipflowError.
"""

from __future__ import annotations


class SlipflowError(Exception):
    """Base class for all package errors."""


# -- configuration / io -------------------------------------------------------

class MissingKey(SlipflowError):
    """A required configuration key is absent."""


class TypeMismatch(SlipflowError):
    """A configuration value could not be coerced to its declared type."""


class InvariantViolation(SlipflowError):
    """A configuration or state invariant is violated (exactly one named)."""


class IoFailure(SlipflowError):
    """A file could not be read or written."""


class SchemaVersionMismatch(SlipflowError):
    """A snapshot was written with an incompatible schema version."""


class SchemaMismatch(SlipflowError):
    """A CSV artifact does not have the expected columns or footer."""


# -- geometry ------------------------------------------------------------------

class UnsupportedShape(SlipflowError):
    """Body shape not supported by the requested operation."""


class UnsupportedDomain(SlipflowError):
    """Domain kind not supported (only axis-aligned boxes are)."""


class BodyOutsideDomain(SlipflowError):
    """The body is not strictly inside the domain."""


# -- rigid body ----------------------------------------------------------------

class NonpositiveDensity(SlipflowError):
    """Body density is not strictly positive on the body."""


class SingularInertia(SlipflowError):
    """Inertia data cannot be inverted (zero mass or singular J)."""


class DegenerateInertia(SlipflowError):
    """Inertia data invalid for the collision bound (m <= 0 or J <= 0)."""


# -- solvers -------------------------------------------------------------------

class CflViolation(SlipflowError):
    """Advective CFL number exceeded the stability bound."""


class LinearSolveFailure(SlipflowError):
    """A linear solve failed or returned non-finite values."""


class IndefiniteMass(SlipflowError):
    """Weighted mass matrix is not positive definite (density collapse)."""


class PicardDivergence(SlipflowError):
    """Picard iteration hit maxiter without meeting the tolerance."""


class CollisionHalt(SlipflowError):
    """Body came within the guard distance of the wall; run halted."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DomainError(SlipflowError):
    """A renormalization function was evaluated outside its domain."""


class IncompatiblePair(SlipflowError):
    """Blended test-function inputs violate the normal-trace compatibility."""
