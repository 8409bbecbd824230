"""Plate-fin heat sink surrogate study: solver, CIC regressor, compressed WGAN, timeline reconstruction."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
