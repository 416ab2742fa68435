"""
Seed derivation for reproducible experiments.

Every random stream is derived from the single run seed by hashing
(seed, purpose, index), so adding a consumer never shifts another one's
numbers and parallel workers draw the same values in any schedule.
"""

import hashlib
from typing import Any

import numpy as np


def derive_seed(seed: int, *path: Any) -> int:
    """Stable 64-bit child seed for a (seed, purpose, index...) path."""
    key = "/".join([str(int(seed))] + [str(part) for part in path])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def derive_rng(seed: int, *path: Any) -> np.random.Generator:
    """numpy Generator seeded from derive_seed."""
    return np.random.default_rng(derive_seed(seed, *path))
