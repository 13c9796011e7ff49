"""SplitMix64: a small splittable 64-bit generator owned by the package.

The generator is counter based: the i-th output after state ``s`` is
``mix(s + i * GAMMA)``, so a block of draws is computed in one vectorized
pass and the sequence does not depend on numpy's own generators, the
platform, or the block sizes used to consume it.

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)
"""
from __future__ import annotations

import numpy as np

from ..errors import RangeError
from .tensor import Tensor

ALGORITHM_ID = "splitmix64"

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Prng:
    """Deterministic generator; identical seeds give identical streams."""

    algorithm_id = ALGORITHM_ID

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def __repr__(self):
        return f"Prng(state=0x{self.state:016x})"

    def next_u64(self, n: int) -> np.ndarray:
        """Return ``n`` raw 64-bit outputs and advance the state past them."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            out = _mix(steps + np.uint64(self.state))
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def split(self) -> "Prng":
        """Child generator seeded from this stream (advances this one by one draw)."""
        return Prng(int(self.next_u64(1)[0]))

    def spawn(self, key: int) -> "Prng":
        """Child generator derived from the current state and ``key``; does not advance."""
        with np.errstate(over="ignore"):
            seed = _mix(np.array([(self.state ^ ((int(key) * GAMMA) & _MASK)) & _MASK], dtype=np.uint64))
        return Prng(int(seed[0]))

    def random(self, n: int) -> np.ndarray:
        """``n`` float64 values uniform on [0, 1) with 53 bits of resolution."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` integers uniform on [0, high)."""
        if high < 1:
            raise RangeError(f"integers needs high >= 1, got {high}")
        return np.minimum((self.random(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def normal(self, shape, mean: float = 0.0, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        """Box-Muller transform of uniform pairs."""
        size = int(np.prod(shape))
        m = (size + 1) // 2
        u = self.random(2 * m)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        theta = 2.0 * np.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:size]
        return (mean + std * z).reshape(shape).astype(dtype)


def prng_uniform(prng: Prng, extents, lo: float = -1.0, hi: float = 1.0, dtype=np.float32) -> Tensor:
    """Tensor of values uniform on [lo, hi)."""
    if not lo < hi:
        raise RangeError(f"uniform range needs lo < hi, got [{lo}, {hi})")
    extents = tuple(int(e) for e in np.atleast_1d(extents))
    size = int(np.prod(extents))
    vals = (lo + (hi - lo) * prng.random(size)).astype(dtype)
    # rounding to float32 can land exactly on hi
    top = np.nextafter(dtype(hi), dtype(lo))
    vals = np.minimum(vals, top)
    return Tensor(vals.reshape(extents))
