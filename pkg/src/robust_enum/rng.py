"""Seed derivation.

Every random stream is a Philox (counter-based) generator keyed by a master
seed plus a tuple of integers naming the task, e.g. ``(sweep_point, run)``.
Streams for different keys are statistically independent, so work can be
split across processes in any order and still reproduce bit for bit.
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed for ``key``; stable across platforms and numpy versions."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
