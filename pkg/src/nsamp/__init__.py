"""Approximate message passing with non-separable denoisers, state evolution and desk-scale studies."""

__version__ = "0.1.0"
