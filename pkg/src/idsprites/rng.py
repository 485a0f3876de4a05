"""Deterministic splitmix64 random stream.

Every random decision in the package goes through this generator so that a
benchmark stream is a pure function of its integer seeds, independent of
platform, numpy version and thread count.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_TWO_POW_M53 = 2.0 ** -53


def mix64(z: int) -> int:
    """splitmix64 finalizer applied to a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed.

    Each part is absorbed as ``h = mix64(h + GOLDEN_GAMMA ^ mix64(part))``, so
    ``derive_seed(master, task, shape)`` differs for every coordinate and
    task ``t`` can be regenerated without touching tasks ``< t``.
    """
    h = 0
    for p in parts:
        h = mix64((h + (GOLDEN_GAMMA ^ mix64(int(p) & MASK64))) & MASK64)
    return h


class Rng:
    """splitmix64 generator.

    >>> r = Rng(0)
    >>> hex(r.next_u64())
    '0xe220a8397b1dcdaf'
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * _TWO_POW_M53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Integer uniform on the closed interval [lo, hi]."""
        if hi < lo:
            raise ValueError("empty integer range")
        span = hi - lo + 1
        return lo + min(int(self.uniform() * span), span - 1)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def sample_indices(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(n)``, returned sorted."""
        if k >= n:
            return list(range(n))
        return sorted(self.permutation(n)[:k])

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` doubles, bit-identical to ``n`` successive :meth:`uniform` calls."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
