"""SplitMix64 random stream shared by every seeded operation in the package.

All randomness (weight init, shuffles, noise, synthetic scenes) is drawn from
this one generator so results are reproducible bit-for-bit given a seed.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_GAMMA = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64_scalar(state: int) -> tuple[int, int]:
    """One SplitMix64 step in pure integer arithmetic. Returns (new_state, output)."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful SplitMix64 generator with vectorized draws.

    Drawing n values advances the state exactly as n scalar steps would, so
    batched and one-at-a-time consumption yield the same sequence.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state, out = splitmix64_scalar(self.state)
        return out

    def u64(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GAMMA
            out = _mix(states)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits of each output."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, low: float, high: float, n: int | None = None):
        if n is None:
            return low + (high - low) * self.random()
        return low + (high - low) * self.uniform(n)

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high) (small ranges; modulo bias is negligible)."""
        if high <= low:
            raise ValueError("empty integer range")
        return low + self.next_u64() % (high - low)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal samples via Box-Muller, two per pair of uniforms."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        u1 = 1.0 - u[:, 0]  # (0, 1], keeps log finite
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        draws = self.uniform(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
