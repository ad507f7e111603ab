"""Seed derivation shared by every stochastic step in the pipeline.

All randomness flows through numpy PCG64 generators whose seeds are derived
from one user seed plus a tag path, so any sub-computation (a permutation
replicate, a pair evaluation, an ICE sample) is reproducible in isolation.
The derivation is part of the public contract: independent re-derivations
of a seeded quantity must build their generator the same way.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(*parts) -> int:
    """Map a tag path like (seed, "perm", "lstat", 2) to a 64-bit seed.

    Uses SHA-256 over the string forms, so the result is stable across
    processes and platforms (unlike builtin hash()).
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*parts) -> np.random.Generator:
    """A fresh PCG64 generator seeded by stable_seed(*parts)."""
    return np.random.Generator(np.random.PCG64(stable_seed(*parts)))
