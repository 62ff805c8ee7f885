"""Subspace support vector data description."""

__version__ = "0.1.0"
