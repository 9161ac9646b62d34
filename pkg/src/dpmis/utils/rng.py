"""
Seeded random number generators.

All stochastic code takes a ``numpy.random.Generator`` as an argument. The
bit generator is Philox-4x64, a counter-based 64-bit generator, so that a
stream is fully determined by its key. Independent streams for repeats,
workers or anchors are keyed by the run seed plus a tuple of integer tags
through ``SeedSequence``, which keeps them reproducible regardless of the
order in which they are created.
"""

from typing import Sequence

import numpy as np

SEED_MAX = 2**64


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    """
    Create a Philox generator for ``seed`` and optional stream tags.

    Args:
        seed: Run seed, 0 <= seed < 2**64
        tags: Non-negative integers naming a sub-stream (e.g. n, repeat)

    Returns:
        Independent generator for the (seed, tags) stream
    """
    if not 0 <= seed < SEED_MAX:
        raise ValueError(f"Seed must be in [0, 2**64), got {seed}")
    entropy: Sequence[int] = [int(seed), *[int(t) for t in tags]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
