"""Seed mixing and a tiny counter-free generator for reproducible draws.

Every random decision in the package is keyed by an explicit tuple such as
``(global_seed, epoch, sample_index)``.  The tuple is folded into a single
64-bit seed with :func:`mix64`, so results never depend on which worker or
in which order samples were prepared.
"""
from __future__ import annotations

from typing import MutableSequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def fmix64(z: int) -> int:
    """SplitMix64 output finalizer (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(*fields: int) -> int:
    """Fold integer fields into one well-avalanched 64-bit seed.

    ``h0 = fmix64(f0 + gamma)``, then ``h_i = fmix64(h_{i-1} ^ fmix64(f_i + (i + 1) * gamma))``.
    Negative fields are taken modulo 2**64.  Order matters:
    ``mix64(1, 2) != mix64(2, 1)``.
    """
    if not fields:
        raise ValueError("mix64 needs at least one field")
    h = fmix64((fields[0] & MASK64) + GOLDEN_GAMMA)
    for i, f in enumerate(fields[1:], start=1):
        h = fmix64(h ^ fmix64((f & MASK64) + (i + 1) * GOLDEN_GAMMA))
    return h


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return fmix64(self.state)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection (no modulo bias)."""
        if bound < 1:
            raise ValueError("bound must be positive")
        limit = ((1 << 64) // bound) * bound
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound


def fisher_yates(items: MutableSequence, rng: SplitMix64) -> MutableSequence:
    """Shuffle ``items`` in place (Durstenfeld's descending variant) and return it."""
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def numpy_rng(*fields: int) -> np.random.Generator:
    """numpy Generator seeded from :func:`mix64` of ``fields``."""
    return np.random.default_rng(mix64(*fields))
