"""Numerical building blocks: differentiation core and supernetwork."""
