"""Counter-based pseudo-random stream.

Draw ``k`` of a stream seeded with ``s`` is ``splitmix64(s + (k + 1) * GAMMA)``
where ``splitmix64`` is the standard SplitMix64 output mix.  Uniforms take the
top 53 bits, shifted by half an ulp so they lie strictly inside (0, 1).
Gaussians use Box-Muller on consecutive uniform pairs.  The stream holds only
the seed and a counter, so any draw can be reproduced from its index.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1


def splitmix64(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


class CounterStream:
    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter)

    def raw(self, k: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + k + 1, dtype=np.uint64)
        self.counter += k
        with np.errstate(over="ignore"):
            x = np.uint64(self.seed) + idx * GAMMA
        return splitmix64(x)

    def uniform(self, k: int) -> np.ndarray:
        bits = self.raw(k) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0 ** -53

    def normal(self, k: int) -> np.ndarray:
        """k standard normals; consumes 2 * ceil(k / 2) uniforms."""
        pairs = (k + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        t = 2.0 * np.pi * u[:, 1]
        out = np.column_stack([r * np.cos(t), r * np.sin(t)]).reshape(-1)
        return out[:k]

    def signs(self, k: int) -> np.ndarray:
        return np.where(self.uniform(k) < 0.5, -1.0, 1.0)

    def integers(self, k: int, high: int) -> np.ndarray:
        return np.minimum((self.uniform(k) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # sort keys drawn from the stream; ties are impossible in practice
        return np.argsort(self.uniform(n), kind="stable")
