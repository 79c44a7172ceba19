"""Experiment runner, oracle rankings and report tables."""

__version__ = "1.0.0"
