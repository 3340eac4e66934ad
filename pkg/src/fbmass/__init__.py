"""Numerical laboratory for mass, free-boundary minimal surfaces, and conformal spectra."""

__version__ = "0.1.0"
