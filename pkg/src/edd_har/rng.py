"""Explicit, splittable seeding. Every stochastic call site receives its own stream."""
from __future__ import annotations

import numpy as np


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass an int or SeedSequence, not a Generator")
    return np.random.SeedSequence(seed)


def split(seed, n: int) -> list[np.random.SeedSequence]:
    return seed_sequence(seed).spawn(n)


def as_int(seed) -> int:
    """Collapse a seed to a 32-bit int (for config files and manifests)."""
    return int(seed_sequence(seed).generate_state(1)[0])
