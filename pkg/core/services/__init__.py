"""Search services: bilevel architecture search and multi-fidelity HPO."""
