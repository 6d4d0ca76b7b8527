"""Deterministic named random streams.

Every stochastic operation draws from a generator derived from the run seed
plus a path of labels/counters. Streams are pure functions of (seed, path),
so resuming training at step k replays exactly the stream an uninterrupted
run would have used.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(str(part).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed, *path):
    """Generator for the stream named by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
