"""Counter-based deterministic random generator (SplitMix64).

Tile offsets, curation subsampling, and synthetic scenes all draw from this
generator so that a given seed produces identical output in any
implementation of the toolkit, on any platform. Constants are the standard
SplitMix64 ones (Steele, Lea, Flood 2014):

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Bounded draws use the multiply-shift reduction ``(u64 * n) >> 64`` (Lemire),
uniform doubles take the top 53 bits, and gaussians come from Box-Muller on
two uniform draws.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """One SplitMix64 output for the given state value (stateless helper)."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 stream seeded with a 64-bit value."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def bounded(self, n: int) -> int:
        """Draw uniformly from [0, n). n must be >= 1."""
        if n < 1:
            raise ValueError("bounded() needs n >= 1")
        return (self.next_u64() * n) >> 64

    def uniform(self) -> float:
        """Draw uniformly from [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def gauss(self) -> float:
        """One standard normal via Box-Muller (consumes two draws)."""
        # u1 in (0, 1] so log() is finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle_take(self, n: int, k: int) -> list[int]:
        """First k positions of a Fisher-Yates shuffle of range(n).

        Used for without-replacement subsampling; O(n) memory, O(k) draws.
        """
        if k > n:
            raise ValueError("cannot take more elements than the population")
        idx = list(range(n))
        for i in range(k):
            j = i + self.bounded(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
