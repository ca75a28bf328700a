"""Seeded random streams.

Every random draw in the package goes through numpy's Philox4x64 generator, a
counter-based bit generator, keyed by a 64-bit seed. Runs that need several
independent streams split them with ``SeedSequence.spawn`` so that, e.g.,
player sampling and gradient noise never share state.
"""
import numpy as np


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_rngs(seed, count: int) -> list:
    return [np.random.Generator(np.random.Philox(s))
            for s in np.random.SeedSequence(seed).spawn(count)]


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed derived from a tuple of non-negative integers."""
    state = np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))
