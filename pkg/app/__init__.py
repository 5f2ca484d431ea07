"""Equation-free multiscale solver for wave equations in non-divergence form."""

__version__ = "0.1.0"
