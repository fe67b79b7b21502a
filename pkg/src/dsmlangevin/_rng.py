"""Seed derivation.

Every random draw in the package comes from a counter-based Philox generator
keyed by ``(seed, *tags)``, so results never depend on call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"negative seed/tag {tag}")
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator for the stream named by ``(seed, *tags)``."""
    ss = np.random.SeedSequence([_word(seed)] + [_word(t) for t in tags])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *tags) -> int:
    """A 63-bit integer seed derived from ``(seed, *tags)``."""
    ss = np.random.SeedSequence([_word(seed)] + [_word(t) for t in tags])
    return int(ss.generate_state(2, np.uint32).astype(np.uint64) @ np.array([1 << 31, 1], dtype=np.uint64))
