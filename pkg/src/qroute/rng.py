"""SplitMix64 generator shared by every stage.

The Python class and the numba helpers produce the same stream for the
same seed, so kernels and their pure-Python references can be compared
draw for draw.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit counter-based generator (state += golden gamma, then mix)."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _finalize(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 output bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.random() * n)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, consuming one draw per position."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def mix_seed(seed: int, *parts: int) -> int:
    """Derive a child seed: one generator advance per mixed-in part."""
    s = int(seed) & _MASK
    for p in parts:
        s = SplitMix64(s ^ (int(p) & _MASK)).next_u64()
    return s


# numba twins: state lives in a length-1 uint64 array.

_G = np.uint64(_GOLDEN)
_M1 = np.uint64(_MUL1)
_M2 = np.uint64(_MUL2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit(cache=True, nogil=True)
def nb_next_u64(state):
    s = state[0] + _G
    state[0] = s
    z = (s ^ (s >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def nb_random(state):
    return np.float64(nb_next_u64(state) >> _S11) * _INV_2_53


@njit(cache=True, nogil=True)
def nb_below(state, n):
    return np.int64(nb_random(state) * n)


@njit(cache=True, nogil=True)
def nb_mix_seed(seed, a, b, c):
    st = np.empty(1, dtype=np.uint64)
    st[0] = seed ^ a
    s = nb_next_u64(st)
    st[0] = s ^ b
    s = nb_next_u64(st)
    st[0] = s ^ c
    return nb_next_u64(st)


def state_array(seed: int) -> np.ndarray:
    return np.array([int(seed) & _MASK], dtype=np.uint64)
