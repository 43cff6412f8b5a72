# src/utils/rng.py - Named, independent random streams
"""Seeded random streams, one per purpose.

Every consumer asks for its own generator keyed by a purpose and optional
integer keys (snapshot index, update index, area id). Streams never share
state, so adding draws to one component does not shift another.
"""
from enum import IntEnum

import numpy as np


class StreamPurpose(IntEnum):
    PARTITION = 1
    SELECTION = 2
    NOISE = 3
    BAD_DATA = 4
    GOSSIP = 5
    TRAJECTORY = 6
    SAMPLER = 7


class RandomStreams:
    """Factory of reproducible generators derived from one root seed."""

    def __init__(self, seed: int = 0):
        if seed is None or int(seed) < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = int(seed)

    def generator(self, purpose: StreamPurpose, *keys: int) -> np.random.Generator:
        spawn_key = (int(purpose),) + tuple(int(key) for key in keys)
        if any(key < 0 for key in spawn_key):
            raise ValueError(f"stream keys must be non-negative, got {keys}")
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        return np.random.default_rng(sequence)

    def __repr__(self):
        return f"RandomStreams(seed={self.seed})"
