"""Anisotropic averaged Euler equations on the flat periodic torus."""

__version__ = "0.1.0"
