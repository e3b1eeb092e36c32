"""Counter-based, splittable random streams.

Every stream is identified by a 64-bit key obtained by hashing a root seed
together with a path of integers (experiment id, replica index, ...).  The
``i``-th draw of a stream is ``mix64(key + (i + 1) * GOLDEN)``, i.e. the
SplitMix64 output sequence seeded at ``key``.  Because a draw depends only on
``(key, counter)``, results never depend on how replicas are scheduled over
worker threads.

The same arithmetic is exposed three ways: plain Python integers (key
derivation), vectorised numpy (:class:`Stream`), and numba kernels (the
``*_nb`` helpers operating on a two-slot ``uint64`` state array
``[key, counter]``).
"""

from __future__ import annotations

import math
import zlib

import numba as nb
import numpy as np

ALGORITHM_ID = "splitmix64-ctr/v1"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

GOLDEN = np.uint64(_GOLDEN)
M1 = np.uint64(_M1)
M2 = np.uint64(_M2)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0


def mix64(x: int) -> int:
    """SplitMix64 finaliser on a Python int (taken modulo 2**64)."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _path_item(item) -> int:
    if isinstance(item, str):
        return zlib.crc32(item.encode("utf-8"))
    return int(item) & _MASK


def derive_key(root_seed: int, *path) -> int:
    """Hash ``root_seed`` and a path of ints/strings into a stream key.

    Strings are converted with CRC32 so experiment names can be used as path
    components.  ``derive_key(derive_key(r, a), b) == derive_key(r, a, b)``.
    """
    h = mix64((int(root_seed) & _MASK) + _GOLDEN)
    for item in path:
        h = mix64(h ^ mix64(_path_item(item) + _GOLDEN))
    return h


class StreamKey:
    """A root seed plus a path; ``child`` extends the path."""

    def __init__(self, root_seed: int, path: tuple = ()):
        self.root_seed = int(root_seed)
        self.path = tuple(path)

    def child(self, *items) -> "StreamKey":
        return StreamKey(self.root_seed, self.path + tuple(items))

    @property
    def key(self) -> int:
        return derive_key(self.root_seed, *self.path)

    def __repr__(self):
        return f"StreamKey({self.root_seed}, {self.path!r})"


class Stream:
    """Numpy-side view of a counter-based stream (used outside kernels)."""

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & _MASK
        self.counter = int(counter)

    @classmethod
    def from_key(cls, key: StreamKey) -> "Stream":
        return cls(key.key)

    def raw(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + i * GOLDEN
            z = (z ^ (z >> S30)) * M1
            z = (z ^ (z >> S27)) * M2
        return z ^ (z >> S31)

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1) with 53 random bits each."""
        return (self.raw(n) >> S11).astype(np.float64) * INV53

    def state(self) -> np.ndarray:
        """Two-slot ``[key, counter]`` array for numba kernels."""
        return np.array([self.key, self.counter], dtype=np.uint64)


def derive_stream(key: StreamKey) -> Stream:
    return Stream.from_key(key)


# --- numba side -----------------------------------------------------------


@nb.njit(cache=True, inline="always")
def mix64_nb(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@nb.njit(cache=True)
def child_key_nb(key, index):
    """numba twin of ``derive_key(parent, index)`` for a non-negative int."""
    return mix64_nb(np.uint64(key) ^ mix64_nb(np.uint64(index) + GOLDEN))


@nb.njit(cache=True)
def new_state_nb(key):
    st = np.empty(2, dtype=np.uint64)
    st[0] = key
    st[1] = 0
    return st


@nb.njit(cache=True, inline="always")
def next_u64_nb(st):
    st[1] += ONE
    return mix64_nb(st[0] + st[1] * GOLDEN)


@nb.njit(cache=True, inline="always")
def uniform_nb(st):
    """Uniform on [0, 1)."""
    return np.float64(next_u64_nb(st) >> S11) * INV53


@nb.njit(cache=True, inline="always")
def uniform_pos_nb(st):
    """Uniform on (0, 1]; safe for ``log``."""
    return (np.float64(next_u64_nb(st) >> S11) + 1.0) * INV53


@nb.njit(cache=True, inline="always")
def categorical_nb(cdf, u):
    """Index of the first cdf entry exceeding ``u`` (cdf[-1] must be 1)."""
    n = cdf.shape[0]
    for k in range(n - 1):
        if u < cdf[k]:
            return k
    return n - 1


@nb.njit(cache=True, inline="always")
def geometric_nb(st, log_fail):
    """Failures before the first success; ``log_fail = log(1 - p_success)``."""
    if log_fail == -np.inf:
        return 0
    return np.int64(math.floor(math.log(uniform_pos_nb(st)) / log_fail))
