"""Dual variational solver for nonlinear time-harmonic Maxwell problems.

Modules: ``fields`` (grids, media, field IO), ``spectral`` (periodic FFT
operators), ``cavity`` (staggered-grid cube discretization), ``nonlin``
(nonlinearity and its inverse), ``dualsolve`` (dual functionals and critical
point searches), ``verify`` and ``cli``.
"""
from .fields import GridSpec, Medium, VectorField, load_field, save_field
from .nonlin import Nonlinearity

__version__ = "0.1.0"

__all__ = ["GridSpec", "Medium", "VectorField", "Nonlinearity", "load_field", "save_field", "__version__"]
