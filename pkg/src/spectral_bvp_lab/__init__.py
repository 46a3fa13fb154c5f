"""Boundary-reduction laboratory for spectral boundary value problems on model half-cylinders."""

__version__ = "0.1.0"
