"""Seeded random streams.

Every random draw in the package goes through :func:`make_generator`.  The
algorithm is fixed:

* a SplitMix64 sequence is started at ``(seed + stream * 0xD1B54A32D192ED03)
  mod 2**64``;
* its first four outputs ``s0..s3`` initialise numpy's ``PCG64`` bit generator
  (PCG XSL-RR 128/64) with ``state = s0 << 64 | s1`` and
  ``inc = (s2 << 64 | s3) | 1``.

Bernoulli draws compare one raw 64-bit output against ``floor(p * 2**64)``.
Gaussian and uniform variates come from ``numpy.random.Generator`` on top of
that bit generator.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
STREAM_STRIDE = 0xD1B54A32D192ED03


class SplitMix64:
    """SplitMix64 sequence (Steele, Lea and Flood 2014)."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def make_bit_generator(seed: int, stream: int = 0) -> np.random.PCG64:
    sm = SplitMix64(seed + stream * STREAM_STRIDE)
    s0, s1, s2, s3 = (sm.next() for _ in range(4))
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": (s0 << 64) | s1, "inc": ((s2 << 64) | s3) | 1},
        "has_uint32": 0,
        "uinteger": 0,
    }
    return bg


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a ``numpy.random.Generator`` for ``(seed, stream)``.

    Distinct streams of the same seed are used for independent purposes
    (graph sampling, instance data) so that they never share draws.
    """
    return np.random.Generator(make_bit_generator(seed, stream))


def bernoulli_threshold(p: float) -> int:
    """Integer threshold ``floor(p * 2**64)`` for a Bernoulli(p) draw."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    # exact for binary floats: p * 2**64 is a scaled mantissa
    return int(p * (1 << 64)) if p < 1.0 else 1 << 64


def bernoulli(bg: np.random.PCG64, p: float) -> bool:
    return int(bg.random_raw()) < bernoulli_threshold(p)
