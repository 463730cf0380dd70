"""Small helpers shared across modules: seeded RNG streams and float formatting."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for one named component of a seeded run.

    Streams are derived from ``(seed, *keys)`` so adding a new component never
    shifts the draws of an existing one.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *map(_key, keys)]))


def fmt_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))
