"""Core package: autodiff, supernets, subset selectors and search services."""

__version__ = "1.0.0"
