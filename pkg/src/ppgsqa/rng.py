"""Platform-independent random streams built on SplitMix64.

SplitMix64 is a counter-based generator: output ``i`` (0-based) of a stream
seeded with ``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` where

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

(all arithmetic modulo 2**64). Because each output depends only on the seed
and its index, whole blocks are generated with vectorised numpy uint64
arithmetic and the stream is bit-identical on every platform.

Derived draws:

* ``random``: ``(z >> 11) * 2**-53``, a double in [0, 1).
* ``next_uint32``: each 64-bit output split into its low then high 32-bit half.
* ``normal``: Box-Muller on two consecutive uniforms, ``u1`` mapped to (0, 1].
* ``permutation``: Fisher-Yates from the top index down, ``j = floor(u * (i + 1))``.
"""
from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_GAMMA = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(MIX1)
_M2 = np.uint64(MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def splitmix64_scalar(state: int) -> tuple[int, int]:
    """Reference scalar step: returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return state, z ^ (z >> 31)


class SplitMix64:
    """Seeded stream of 64-bit outputs with numpy conveniences."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        n = int(n)
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GAMMA
            z = (z ^ (z >> _S30)) * _M1
            z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)

    def next_uint32(self, n: int) -> np.ndarray:
        n = int(n)
        words = self.next_uint64((n + 1) // 2)
        halves = words.astype("<u8").view("<u4")
        return halves[:n]

    def random(self, shape=None) -> np.ndarray | float:
        size = 1 if shape is None else int(np.prod(shape))
        u = (self.next_uint64(size) >> _S11).astype(np.float64) * (2.0 ** -53)
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape) -> np.ndarray:
        size = int(np.prod(shape))
        u = self.random(2 * size)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, high: int, shape=None):
        """Draws in ``[0, high)``."""
        u = self.random(shape)
        return np.floor(np.asarray(u) * high).astype(np.int64) if shape is not None else int(u * high)

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def get_state(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"]) & MASK64
        self.counter = int(state["counter"])


def seeded_rng(seed: int) -> SplitMix64:
    return SplitMix64(seed)
