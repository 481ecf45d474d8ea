"""Seeded counter-based random generators."""

from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; identical streams for identical seeds."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn(seed, *keys: int) -> np.random.Generator:
    """Independent stream derived from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return np.random.Generator(np.random.Philox(ss))
