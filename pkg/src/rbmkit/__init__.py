"""Reflected Brownian motions in the orthant and rank-based particle systems."""

__version__ = "0.1.0"
