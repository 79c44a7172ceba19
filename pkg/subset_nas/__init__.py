"""Subset-accelerated architecture and hyperparameter search harness."""

__version__ = "1.0.0"
