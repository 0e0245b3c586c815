"""Seed derivation.

Every random quantity in a run descends from one integer master seed through
``numpy.random.SeedSequence`` spawn keys.  A child seed is identified by a
path of small integers, for example ``(replica, STREAM_NOISE)``, and
``derive_seed(master, *path)`` is a pure function of its arguments, so any
replica or sweep point can be regenerated on its own.
"""
from __future__ import annotations

import numpy as np

STREAM_PATTERNS = 0
STREAM_NOISE = 1
STREAM_PATTERNS_MOMENTUM = 2
STREAM_NOISE_MOMENTUM = 3
STREAM_SWEEP = 4

#: sub-streams of a pattern seed
SUBSTREAM_A = 0
SUBSTREAM_B = 1


def derive_seed(master: int, *path: int) -> int:
    """64-bit child seed of ``master`` at spawn-key ``path``."""
    if master < 0:
        raise ValueError("seeds must be nonnegative")
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int, *path: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` at spawn-key ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in path))
    return np.random.Generator(np.random.Philox(ss))
