"""Seeded splitmix64 generator used for every random decision in the repo.

Counter-based, so identical seeds give identical streams on every platform
regardless of numpy build. All float output is float32.
"""

from __future__ import annotations

import math

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Splitmix64:
    """Deterministic PRNG: output(i) = mix(seed + (i+1) * gamma)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GAMMA)

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def random(self, n: int | None = None):
        """Uniform floats in [0, 1). Scalar when n is None."""
        m = 1 if n is None else n
        vals = (self._raw(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(vals[0]) if n is None else vals

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return (lo + (hi - lo) * self.random(n)).astype(np.float32)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller."""
        pairs = (n + 1) // 2
        u1 = (self._raw(pairs) >> np.uint64(11)).astype(np.float64)
        u2 = (self._raw(pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * 2.0**-53  # (0, 1]: keeps log finite
        u2 = u2 * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.astype(np.float32)

    def randint(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is irrelevant at desk scale."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def derive(self, offset: int) -> "Splitmix64":
        """Child generator with an independent stream (fixed-offset seed)."""
        return Splitmix64((self.seed + 0x632BE59BD9B4E019 * (offset + 1)) & 0xFFFFFFFFFFFFFFFF)
