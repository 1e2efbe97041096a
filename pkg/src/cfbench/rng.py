"""Deterministic RNG derivation shared across modules.

numpy SeedSequence entropy must be non-negative, so raw integer seeds are
reduced modulo 2**63 before use.
"""

from __future__ import annotations

import numpy as np


def seed_entropy(*parts) -> list[int]:
    return [int(p) % (1 << 63) for p in parts]


def spawn_rng(*parts) -> np.random.Generator:
    """A Generator keyed by the given integer parts."""
    return np.random.default_rng(np.random.SeedSequence(seed_entropy(*parts)))


def derive_seed(*parts) -> int:
    """Mix integer parts into one reproducible 64-bit seed."""
    ss = np.random.SeedSequence(seed_entropy(*parts))
    a, b = ss.generate_state(2)
    return (int(a) << 32) | int(b)
