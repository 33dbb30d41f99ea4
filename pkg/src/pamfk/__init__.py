"""Feynman-Kac Monte Carlo laboratory for the 2D parabolic Anderson model."""

__version__ = "0.1.0"
