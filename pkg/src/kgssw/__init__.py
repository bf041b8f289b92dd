"""Klein-Gordon pair creation with pseudodegenerate bound states."""
from .core import Grid, PhysicalConstants, Tolerances, make_grid

__version__ = "0.1.0"

__all__ = ["Grid", "PhysicalConstants", "Tolerances", "make_grid", "__version__"]
