"""Seeded xorshift64* generator used for every random draw in the toolkit."""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


class XorShift64Star:
    """Marsaglia/Vigna xorshift64* generator.

    The state is a nonzero 64-bit integer. A zero seed is remapped through a
    splitmix64 step so that ``XorShift64Star(0)`` is still usable.
    """

    def __init__(self, seed: int = 0):
        state = _splitmix64(int(seed) & _MASK)
        self._state = state or 0x9E3779B97F4A7C15

    @property
    def state(self) -> int:
        return self._state

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self._state = x
        return (x * _MULT) & _MASK

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        out = low + (high - low) * out
        return out.reshape(shape) if shape != () else out[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via Box-Muller (both outputs used)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        vals = []
        while len(vals) < n:
            u1 = self.random()
            u2 = self.random()
            if u1 <= 0.0:
                continue
            r = math.sqrt(-2.0 * math.log(u1))
            vals.append(r * math.cos(2.0 * math.pi * u2))
            vals.append(r * math.sin(2.0 * math.pi * u2))
        out = np.asarray(vals[:n], dtype=np.float64)
        return out.reshape(shape) if shape != () else out[0]

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return np.asarray(out, dtype=np.int64)

    def spawn(self) -> "XorShift64Star":
        """Independent child stream seeded from this one."""
        return XorShift64Star(self.next_u64())


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)
