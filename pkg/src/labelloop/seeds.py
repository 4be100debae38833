"""Deterministic RNG derivation for every stochastic stage of a run.

Every generator is derived from (run_seed, loop, stage tag, *extras) via
numpy's SeedSequence, so any stage can be re-derived in isolation during
replay without replaying the generators that came before it.
"""

from __future__ import annotations

import numpy as np

TAG_WORLD = 0
TAG_DETECT = 1
TAG_ASSEMBLE = 2
TAG_WORKERS = 3
TAG_TRAIN = 4
TAG_AUGMENT = 5
TAG_EVAL = 6


def rng_for(*entropy: int) -> np.random.Generator:
    """Generator keyed by an explicit entropy tuple."""
    return np.random.default_rng(np.random.SeedSequence(entropy))
