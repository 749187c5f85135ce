"""Deterministic random streams for scene synthesis.

The generator is SplitMix64 run in counter mode: draw i of the stream keyed
by k is finalize(k + (i + 1) * GOLDEN), where finalize is the standard
SplitMix64 output mix. Counter mode keeps the whole corpus a pure function of
(seed, tags, index), vectorizes over numpy uint64 arrays, and is trivial to
reproduce bit-for-bit in any language with wrapping 64-bit arithmetic.

Constants (hex):
    GOLDEN = 9E3779B97F4A7C15
    MIX1   = BF58476D1CE4E5B9   (after z ^= z >> 30)
    MIX2   = 94D049BB133111EB   (after z ^= z >> 27)
    final  = z ^ (z >> 31)

Substream keys chain the same mix over (seed, *tags). Uniforms take the top
53 bits; gaussians come from Box-Muller pairs laid out z0, z1, z0, z1, ...
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1


def _mix(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def mix_py(z: int) -> int:
    """Pure-Python reference for the output mix (used by tests)."""
    z &= _U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64_MASK
    return z ^ (z >> 31)


def stream_key(seed: int, *tags: int) -> int:
    """Derive the counter-stream key for (seed, tags)."""
    h = mix_py(seed & _U64_MASK)
    for t in tags:
        h = mix_py(h ^ mix_py((t + 1) & _U64_MASK))
    return h


class Stream:
    """One tagged counter-mode SplitMix64 stream with a running cursor."""

    def __init__(self, seed: int, *tags: int):
        self._key = np.uint64(stream_key(seed, *tags))
        self._cursor = 0

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._cursor + 1, self._cursor + n + 1, dtype=np.uint64)
        self._cursor += n
        return _mix(self._key + idx * GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n float64 values in [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform_open(self, n: int) -> np.ndarray:
        """n float64 values in (0, 1] (safe for log)."""
        return ((self.u64(n) >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, n: int) -> np.ndarray:
        """n standard gaussians via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniform_open(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(2.0 * math.pi * u2)
        out[1::2] = r * np.sin(2.0 * math.pi * u2)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound); modulo reduction (bias negligible for
        desk-scale bounds against 2^64)."""
        return (self.u64(n) % np.uint64(bound)).astype(np.int64)

    def choice(self, pool: int, k: int) -> np.ndarray:
        """k distinct indices from range(pool), in increasing order."""
        if k > pool:
            raise ValueError(f"cannot choose {k} from {pool}")
        # Fisher-Yates on a small pool; deterministic given the stream state.
        perm = np.arange(pool, dtype=np.int64)
        draws = self.integers(pool, pool)
        for i in range(pool - 1, 0, -1):
            j = int(draws[pool - 1 - i]) % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.sort(perm[:k])
