"""Deterministic random number generation.

All randomness in the toolkit flows through SplitMix64 (Steele, Lea &
Flood 2014): a 64-bit add-and-mix generator with a single u64 of state.
It is implemented here explicitly, rather than taken from numpy, so that
random-control embeddings, model initialization, and epoch shuffling
reproduce bit-exactly on any platform and under any numpy version.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64 stream. State advances by the 64-bit golden ratio;
    outputs are the standard two-round xor-multiply finalizer."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform32(self, n: int) -> np.ndarray:
        """n float32 values uniform on [0, 1): the top 24 output bits
        scaled by 2**-24, so every value is exact in float32 and < 1."""
        vals = [(self.next_u64() >> 40) * 5.9604644775390625e-08 for _ in range(n)]
        return np.asarray(vals, dtype=np.float32)

    def uniform64(self, n: int) -> np.ndarray:
        """n float64 values uniform on [0, 1) from the top 53 bits."""
        vals = [(self.next_u64() >> 11) * 1.1102230246251565e-16 for _ in range(n)]
        return np.asarray(vals, dtype=np.float64)

    def randint(self, n: int) -> int:
        """Integer in [0, n) by modulo reduction. The modulo bias is
        below 2**-50 for any n this toolkit uses; reproducibility is the
        requirement here, not statistical perfection."""
        return self.next_u64() % n

    def shuffle(self, arr: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.randint(i + 1)
            arr[i], arr[j] = arr[j], arr[i]


def derive_seed(seed: int, index: int) -> int:
    """Derive an independent child seed from (seed, index).

    Feeds seed + (index+1)*golden through one SplitMix64 step, so child
    streams for consecutive indices share no alignment with the parent.
    """
    return SplitMix64((int(seed) + (int(index) + 1) * _GOLDEN) & _MASK64).next_u64()
