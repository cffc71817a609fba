"""Reproducible random streams.

All randomness flows through counter-based Philox generators.  A master seed
defines stream 0; independent streams (one per Monte Carlo path) are derived
as ``Philox(key=seed).jumped(index)``, which advances the counter by 2**128
blocks per index and therefore never overlaps.  Identical seeds reproduce
identical paths on any platform supported by numpy.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream"]

_KEY_MASK = (1 << 128) - 1


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for stream `index` of master seed `seed` (index 0 = base stream)."""
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    bitgen = np.random.Philox(key=int(seed) & _KEY_MASK)
    if index:
        bitgen = bitgen.jumped(index)
    return np.random.Generator(bitgen)
