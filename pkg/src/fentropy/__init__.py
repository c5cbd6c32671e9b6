"""Partial entropy along expanding foliations of partially hyperbolic torus maps."""

__version__ = "0.1.0"
