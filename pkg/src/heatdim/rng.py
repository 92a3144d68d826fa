"""Seed derivation.

One master seed (an unsigned 64-bit integer) feeds every experiment.
Independent streams are keyed by a tuple of nonnegative integers
(replica id, role, ...) through :class:`numpy.random.SeedSequence`
spawn keys, and drive counter-based Philox generators, so a replica's
draws do not depend on how many other replicas run or in which order.
"""

from __future__ import annotations

import numpy as np

# spawn-key roles, so different uses of the same replica id never collide
ROLE_FIELD = 0
ROLE_SOLVER = 1
ROLE_CONFIGS = 2
ROLE_MC = 3
ROLE_PROBE = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *key)``."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
