"""Spectral-submanifold reduced models learned from trajectory data."""

__version__ = "0.1.0"
