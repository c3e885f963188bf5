"""Seeded random streams.

Every random draw in the package goes through :func:`stream`.  A stream is a
``numpy.random.Generator`` backed by PCG64 whose state is derived from a
``SeedSequence`` built from the user seed plus a tuple of integer keys
(the ``spawn_key``).  Two calls with the same seed and keys always produce
the same generator, independent of call order or thread scheduling, so
Monte-Carlo sample ``k`` of iteration ``t`` can be drawn anywhere.

Gaussians come from ``Generator.standard_normal`` (numpy's ziggurat
sampler).  That choice is fixed for a release; changing it changes every
frozen number in the acceptance suite.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def stream(seed: int, *keys) -> np.random.Generator:
    """Generator for ``seed`` and the sub-stream named by ``keys``.

    Keys may be non-negative ints or short strings (hashed with CRC32).
    """
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
