"""Rothe time stepping and a-priori estimates for a 1D mixture model."""

__version__ = "0.1.0"
