"""Deterministic random-stream derivation.

All randomness in the package flows from integer seeds. Independent
substreams are derived from a root seed and an integer path (a counter
tuple), so parallel or out-of-order evaluation cannot change results:
the stream for (seed, path) is fixed regardless of which other streams
were consumed before it.
"""
from __future__ import annotations

import numpy as np


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream addressed by ``(root_seed, *path)``.

    Distinct paths yield statistically independent streams; the same
    path always yields the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(path)))


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
