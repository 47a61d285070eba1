"""Counter-based randomness.

Every random draw in the package is addressed by ``(master seed, stream id,
chunk index)``.  A chunk gets its own Philox generator whose key is derived
from the seed and stream id and whose counter starts at the chunk index, so
chunks can be produced in any order (or on different workers) and still
replay bit-for-bit.

Hash functions used by the detectors are a keyed splitmix64 PRF, evaluated
vectorised over numpy ``uint64`` arrays.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_ODD = np.uint64(0xD6E8FEB86659FD93)


def stream_key(seed: int, *labels: object) -> int:
    """Fold a seed and any number of labels into a 64-bit key."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & MASK64).to_bytes(8, "little"))
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, *labels: object) -> int:
    """Child seed for a sub-experiment (e.g. one Monte Carlo trial)."""
    return stream_key(seed, "derive", *labels)


def chunk_generator(seed: int, stream_id: object, chunk: int = 0) -> np.random.Generator:
    key = stream_key(seed, stream_id)
    bitgen = np.random.Philox(key=[key, stream_key(key, "hi")], counter=[0, 0, int(chunk), 0])
    return np.random.Generator(bitgen)


def _as_u64(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype != np.uint64:
        arr = arr.astype(np.int64, copy=False).view(np.uint64) if arr.dtype.kind == "i" else arr.astype(np.uint64)
    return arr


def mix64(x) -> np.ndarray:
    """splitmix64 finaliser, elementwise on uint64 arrays."""
    z = np.array(_as_u64(x), dtype=np.uint64, copy=True, ndmin=1)
    z += _GOLDEN
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def prf(key: int, *parts) -> np.ndarray:
    """Keyed hash of a tuple of integer arrays (broadcast together)."""
    acc = mix64(np.uint64(key & MASK64))
    for part in parts:
        acc = mix64(acc * _ODD ^ _as_u64(part))
    return acc


def prf_extend(acc, part) -> np.ndarray:
    """Continue a :func:`prf` accumulator with one more part, so that
    ``prf_extend(prf(key, a), b) == prf(key, a, b)``.  Lets callers hash a
    shared prefix once and broadcast the tail."""
    return mix64(_as_u64(acc) * _ODD ^ _as_u64(part))


def to_unit(h) -> np.ndarray:
    """Map uint64 hashes to floats in [0, 1)."""
    return (_as_u64(h) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def prf_unit(key: int, *parts) -> np.ndarray:
    """Same as :func:`prf` mapped to floats in [0, 1)."""
    return (prf(key, *parts) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


class Tape:
    """Source of randomness for generators and randomized algorithms.

    The interface is deliberately small so that :class:`EnumTape` can walk
    every outcome of the same code exactly.
    """

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        raise NotImplementedError

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        raise NotImplementedError

    def categorical(self, probs: Sequence[float]) -> int:
        raise NotImplementedError

    def integer(self, low: int, high: int) -> int:
        return int(self.integers(low, high, 1)[0])


class RandomTape(Tape):
    def __init__(self, generator: np.random.Generator):
        self.generator = generator

    @classmethod
    def keyed(cls, seed: int, stream_id: object, chunk: int = 0) -> "RandomTape":
        return cls(chunk_generator(seed, stream_id, chunk))

    def integers(self, low, high, size):
        return self.generator.integers(low, high, size=size, dtype=np.int64)

    def bernoulli(self, p, size):
        return self.generator.random(size) < p

    def categorical(self, probs):
        if len(probs) == 1:
            return 0
        u = self.generator.random()
        c = np.cumsum(probs)
        return int(min(np.searchsorted(c, u * c[-1], side="right"), len(probs) - 1))


class _NeedBranch(Exception):
    pass


class EnumTape(Tape):
    """Replays one path through the finite outcome tree of a computation.

    Use :func:`enumerate_outcomes` rather than this class directly.
    """

    def __init__(self, path: list[int]):
        self.path = path
        self.pos = 0
        self.weight = 1.0
        self.arity: list[int] = []

    def _choose(self, probs: Sequence[float]) -> int:
        if self.pos >= len(self.path):
            self.path.append(0)
        idx = self.path[self.pos]
        self.arity.append(len(probs))
        self.pos += 1
        self.weight *= probs[idx]
        return idx

    def integers(self, low, high, size):
        r = high - low
        idx = self._choose([1.0 / r ** size] * r ** size)
        out = np.empty(size, dtype=np.int64)
        for i in range(size - 1, -1, -1):
            idx, rem = divmod(idx, r)
            out[i] = low + rem
        return out

    def bernoulli(self, p, size):
        probs = []
        for code in range(1 << size):
            w = 1.0
            for i in range(size):
                w *= p if (code >> (size - 1 - i)) & 1 else 1.0 - p
            probs.append(w)
        idx = self._choose(probs)
        return np.array([(idx >> (size - 1 - i)) & 1 == 1 for i in range(size)], dtype=bool)

    def categorical(self, probs):
        return self._choose(list(probs))


def enumerate_outcomes(fn, max_paths: int = 1 << 22) -> dict:
    """Exact distribution of ``fn(tape)`` over every randomness path.

    ``fn`` must be a pure function of the draws it makes on the tape and must
    return something hashable.  Zero-weight paths are dropped.
    """
    pmf: dict = {}
    path: list[int] = []
    for _ in range(max_paths):
        tape = EnumTape(path)
        out = fn(tape)
        if tape.weight > 0.0:
            pmf[out] = pmf.get(out, 0.0) + tape.weight
        arity = tape.arity
        del path[tape.pos:]
        d = len(path) - 1
        while d >= 0 and path[d] + 1 >= arity[d]:
            d -= 1
        if d < 0:
            return pmf
        del path[d + 1:]
        path[d] += 1
    raise RuntimeError(f"outcome tree exceeds {max_paths} paths")


def iter_chunks(total: int, size: int) -> Iterable[tuple[int, int, int]]:
    """(chunk index, start, length) triples covering ``range(total)``."""
    for c, start in enumerate(range(0, total, size)):
        yield c, start, min(size, total - start)
