"""Figures from slipflow run directories.

The package reads the solver's CSV artifacts and renders them; it never
recomputes physics.  Every number shown on a figure is read from the CSV,
and the rates figure echoes the fitted-slope footers verbatim.
"""

from .schemas import SchemaMismatch
from .figures import KINDS, render

__version__ = "0.1.0"

__all__ = ["KINDS", "SchemaMismatch", "render", "__version__"]
