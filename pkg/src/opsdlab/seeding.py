"""Deterministic named random streams.

Every source of randomness in the package draws from a Generator created
here, keyed by a root seed plus a tuple of string/int tags. Identical keys
give identical streams on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_entropy(*parts) -> list[int]:
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode())
        h.update(b"\x1f")
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def spawn_rng(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(stream_entropy(*parts))))
