"""Differentiable MLS-MPM with analytic and learnable constitutive laws."""

from .backend import active_backend, use_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "use_backend", "__version__"]
