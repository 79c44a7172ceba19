"""Seed derivation for isolated, reproducible random streams."""
import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from an ordered tuple of parts."""
    payload = "|".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def make_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
