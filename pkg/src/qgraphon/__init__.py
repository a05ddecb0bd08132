"""Measured quantum particles with graphon mean-field interaction."""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
