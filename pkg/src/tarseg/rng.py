"""Reproducible randomness.

Every random draw in the package comes from a Philox-4x64 counter-based
generator keyed by one 64-bit seed.  Independent streams (one per scene, per
weight group, ...) are selected through the two high words of the 256-bit
counter, so stream ``(a, b)`` never overlaps stream ``(a', b')`` and the result
does not depend on the order in which streams are created.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def stream_id(name: str) -> int:
    """Stable integer id for a named stream."""
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, a: int | str = 0, b: int | str = 0) -> np.random.Generator:
    if isinstance(a, str):
        a = stream_id(a)
    if isinstance(b, str):
        b = stream_id(b)
    bitgen = np.random.Philox(key=int(seed) & MASK64, counter=[0, 0, int(a) & MASK64, int(b) & MASK64])
    return np.random.Generator(bitgen)
