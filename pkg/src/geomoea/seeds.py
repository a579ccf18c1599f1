"""Deterministic RNG streams keyed by structured indices.

Child generators derive from (seed, key...) via SeedSequence spawn keys, so
results do not depend on scheduling order or on how many draws another
stream consumed.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def derive_seed(rng: np.random.Generator) -> int:
    """One fresh integer seed drawn from an existing generator."""
    return int(rng.integers(0, 2**63))
