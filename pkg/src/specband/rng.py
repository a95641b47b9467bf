"""Deterministic, splittable random streams.

Every stochastic operation in this package takes a 64-bit seed. Independent
streams (per batch, per sweep job) are derived by mixing the master seed with
an index tuple through ``numpy``'s ``SeedSequence`` feeding a counter-based
Philox generator, so the streams do not depend on the order in which they are
instantiated.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *indices: int) -> np.random.Generator:
    """Generator for (seed, *indices); independent across distinct index tuples."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *indices: int) -> int:
    """64-bit seed derived from (seed, *indices); feeds nested generators."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
