from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """
    SplitMix64 generator.

    The i-th output is mix(seed + i * gamma) (mod 2^64), so blocks of draws are
    computed vectorised and stay bit-identical to the scalar recurrence.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def draw_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            out = _mix(states)
        self.state = (self.state + n * _GAMMA) & _MASK64
        return out

    def next_u64(self) -> int:
        return int(self.draw_u64(1)[0])

    def uniform(self, shape=()) -> np.ndarray:
        """Float64 uniforms in [0, 1) with 53 random bits each."""
        n = int(np.prod(shape)) if shape != () else 1
        bits = self.draw_u64(n) >> np.uint64(11)
        values = bits.astype(np.float64) * (1.0 / (1 << 53))
        return values.reshape(shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        """Float32 normals via Box-Muller, one pair of uniforms per value."""
        u1 = self.uniform(shape)
        u2 = self.uniform(shape)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return (z * std).astype(np.float32)

    def integers(self, high: int, shape=()) -> np.ndarray:
        return np.floor(self.uniform(shape) * high).astype(np.int64)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self.uniform(p.shape) < p

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform((n,)), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), uniformly without replacement."""
        return self.permutation(n)[:k]

    def spawn(self) -> Rng:
        return Rng(self.next_u64())

    def __repr__(self) -> str:
        return f"Rng(state=0x{self.state:016x})"
