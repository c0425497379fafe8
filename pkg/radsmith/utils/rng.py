"""Seeded generators.

All randomness flows through numpy's PCG64 seeded via SeedSequence, so a
(seed, stream) pair names the same sample sequence on every platform.
"""
import numpy as np

SAMPLING_STREAM = 0
NOISE_STREAM = 1


def mix_seed(master_seed: int, index: int) -> int:
    """Derive the 64-bit seed of item `index` from a master seed"""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


def generator(seed: int, stream: int = SAMPLING_STREAM) -> np.random.Generator:
    """PCG64 generator for one substream of a seed"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))
