"""Seeded random streams.

Every random draw in the package comes from `stream(seed, *keys)`: a Philox
(counter-based) generator keyed by the master seed and an integer path such as
(experiment, replica, chunk).  Streams do not depend on the order in which they
are created, so replicas can run in any order or in parallel.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *keys) -> int:
    """A 64-bit integer identifying the stream, for manifests."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng))
