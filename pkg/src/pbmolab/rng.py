"""Seeded counter-based generators split by named streams."""

from __future__ import annotations

import zlib

import numpy as np


def _key(stream) -> int:
    if isinstance(stream, (int, np.integer)):
        return int(stream)
    return zlib.crc32(str(stream).encode())


def make_rng(seed: int, *streams) -> np.random.Generator:
    """Philox generator for ``seed`` and a path of stream names or integers.

    Distinct stream paths give statistically independent generators; the same
    path always gives the same sequence.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(s) for s in streams))
    return np.random.Generator(np.random.Philox(ss))
