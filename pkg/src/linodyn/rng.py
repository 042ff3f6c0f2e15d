"""Deterministic random streams built on SplitMix64.

The generator is counter-based: output i of a stream with seed s is the
SplitMix64 finalizer applied to s + (i+1)*GOLDEN (all mod 2^64), so streams
are reproducible bit-for-bit on any platform and any chunk of a stream can
be produced independently.  Gaussian deviates are the inverse normal CDF
applied to the 53-bit uniforms.
"""

from __future__ import annotations

import numpy as np

from .special import normal_quantile

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> int:
    """One SplitMix64 output for integer state (finalizer only)."""
    z = (state + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def mix_seed(*parts) -> int:
    """Fold integers into a single 64-bit seed (stable across platforms)."""
    h = 0
    for part in parts:
        h = splitmix64((h ^ (int(part) & _MASK)) & _MASK)
    return h


def raw_stream(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """`count` SplitMix64 outputs of the stream with the given seed."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = (np.uint64(seed & _MASK) + idx * np.uint64(_GOLDEN)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Uniform deviates strictly inside (0, 1), 53 significant bits."""
    bits = raw_stream(seed, count, offset) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) / float(1 << 53)


def normals(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Standard normal deviates via inverse-CDF transform of `uniforms`."""
    return normal_quantile(uniforms(seed, count, offset))
