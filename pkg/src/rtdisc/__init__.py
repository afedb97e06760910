"""Radiative transfer in piecewise-constant disks, boundary-data
discontinuities and their use for X-ray tomography."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
