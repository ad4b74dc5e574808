"""Deterministic, order-independent random streams.

Streams are built on the counter-based Philox generator keyed by a stable
64-bit mix of (seed, stream indices).  A group's draws depend only on the
mixed key, never on which other streams were drawn first, so datasets and
Monte Carlo runs are bit-identical under any parallel schedule.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (stable across platforms)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix(*parts: int) -> int:
    """Combine integers into one well-mixed 64-bit key."""
    key = 0x8E4CD8307A6FF735
    for p in parts:
        key = splitmix64(key ^ splitmix64(int(p) & _MASK))
    return key


def stream(*parts: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``parts``."""
    return np.random.Generator(np.random.Philox(key=mix(*parts)))
