"""Penalized Galerkin scheme for a rigid body in compressible slip flow.

Submodules are imported lazily by the CLI so thread environment variables
can take effect before numpy loads; library users import them directly:

    from slipflow import stepper, limits
    from slipflow.config_io import load_config
"""

from .errors import (BodyOutsideDomain, CflViolation, CollisionHalt,
                     DegenerateInertia, DomainError, IncompatiblePair,
                     IndefiniteMass, InvariantViolation, IoFailure,
                     LinearSolveFailure, MissingKey, NonpositiveDensity,
                     PicardDivergence, SchemaMismatch, SchemaVersionMismatch,
                     SingularInertia, SlipflowError, TypeMismatch,
                     UnsupportedDomain, UnsupportedShape)

__version__ = "0.1.0"

__all__ = [
    "BodyOutsideDomain", "CflViolation", "CollisionHalt", "DegenerateInertia",
    "DomainError", "IncompatiblePair", "IndefiniteMass", "InvariantViolation",
    "IoFailure", "LinearSolveFailure", "MissingKey", "NonpositiveDensity",
    "PicardDivergence", "SchemaMismatch", "SchemaVersionMismatch",
    "SingularInertia", "SlipflowError", "TypeMismatch", "UnsupportedDomain",
    "UnsupportedShape", "__version__",
]
