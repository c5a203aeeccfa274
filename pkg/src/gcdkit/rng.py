"""Deterministic RNG streams keyed by (seed, phase, epoch, step, ...) tuples."""

from __future__ import annotations

import numpy as np


def seed_seq(*keys) -> np.random.SeedSequence:
    flat: list[int] = []
    for k in keys:
        if isinstance(k, (tuple, list)):
            flat.extend(int(x) for x in k)
        else:
            flat.append(int(k))
    return np.random.SeedSequence(flat)


def rng(*keys) -> np.random.Generator:
    return np.random.default_rng(seed_seq(*keys))
