"""Utility functions package: datasets, traces and seed derivation."""
