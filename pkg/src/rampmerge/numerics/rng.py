"""xoshiro256++ pseudo-random generator seeded through splitmix64.

Everything stochastic in the package draws from this generator, so a run is
reproducible from its integer seeds alone, independent of numpy's or the
standard library's generator implementations.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Deterministically derive an independent 64-bit seed for a named stream."""
    _, out = splitmix64((seed & _MASK64) ^ (zlib.crc32(label.encode()) << 32))
    return out


class Xoshiro256pp:
    """xoshiro256++ 1.0 (Blackman & Vigna) with splitmix64 seeding."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        sm = seed & _MASK64
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self._s = state

    @classmethod
    def from_state(cls, state: list[int]) -> Xoshiro256pp:
        rng = cls.__new__(cls)
        if len(state) != 4 or not any(state):
            raise ValueError("state must be four words, not all zero")
        rng._s = [w & _MASK64 for w in state]
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s = self._s
        s0, s1, s2, s3 = s
        x = (s0 + s3) & _MASK64
        result = ((((x << 23) | (x >> 41)) & _MASK64) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        s[0], s[1], s[2], s[3] = s0, s1, s2, s3
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        # rejection keeps the draw exactly uniform
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % n

    def normal(self) -> float:
        """Standard normal draw by Box-Muller (two uniforms per call)."""
        u1 = 1.0 - self.random()  # in (0, 1]
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    def uniform_array(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        span = high - low
        draws = [low + span * self.random() for _ in range(n)]
        return np.asarray(draws, dtype=np.float64).reshape(shape)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
