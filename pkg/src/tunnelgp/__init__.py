"""Tunnel Gaussian processes for trajectory bundles."""

__version__ = "0.1.0"
