"""Seed handling.

Every randomized routine takes an explicit integer seed.  Independent
streams are derived from ``(seed, tag, index)`` through
:class:`numpy.random.SeedSequence`, so adding a new experiment or batch never
shifts the numbers drawn by an existing one.
"""

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def tag_key(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed, tag=None, index=None):
    """Return a ``Generator`` for the stream keyed by ``(seed, tag, index)``."""
    key = [int(seed) & MASK64]
    if tag is not None:
        key.append(tag_key(tag))
    if index is not None:
        key.append(int(index))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def child_seed(seed, tag, index=0):
    """Derive a new 64-bit integer seed (for APIs that take a plain int)."""
    ss = np.random.SeedSequence([int(seed) & MASK64, tag_key(tag), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
