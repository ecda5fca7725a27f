"""Named, reproducible random streams.

Every stream is numpy's PCG64 seeded by ``SeedSequence(entropy=seed,
spawn_key=keys)``.  String keys are mapped to integers with CRC-32 so that a
stream such as ``(seed, "ppc")`` or ``(seed, "scenario-a", 17)`` is stable
across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "stream_key"]


def stream_key(key) -> int:
    """Non-negative integer for a stream label (int passes through)."""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("integer stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``seed`` and a tuple of labels."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
