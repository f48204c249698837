"""Numerical laboratory for damped wave equation spectra on conformal torus metrics."""

__version__ = "0.1.0"
