"""Imbalanced tabular learning for gridded flood damage classification."""

__version__ = "0.1.0"
