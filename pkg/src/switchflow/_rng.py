"""Seed handling.

Every Monte Carlo path ``p`` of an experiment with master seed ``s`` draws
from two streams keyed only by ``(s, p)``: one for the regime chain and one
for the Brownian increments.  Results therefore never depend on how paths
are batched or which worker computes them.
"""

import numpy as np

CHAIN_STREAM = 0
NOISE_STREAM = 1


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def path_generator(seed: int, index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index), int(stream)))
    return np.random.default_rng(ss)


def chain_generator(seed: int, index: int) -> np.random.Generator:
    return path_generator(seed, index, CHAIN_STREAM)


def noise_generator(seed: int, index: int) -> np.random.Generator:
    return path_generator(seed, index, NOISE_STREAM)
