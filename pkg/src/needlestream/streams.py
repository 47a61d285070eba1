"""Stream generators with ground-truth labels.

Each distribution is a small model object with two hooks:

``latent(tape)``
    draws per-instance hidden values (the needle ``alpha``, ...).
``chunk(tape, latent, start, size)``
    draws items ``start .. start+size-1``.

:class:`LabeledStream` binds a model to a seed and produces items lazily, a
chunk at a time, each chunk from its own counter-based generator.  The same
model code runs under :class:`~needlestream.rng.EnumTape`, which is how
:func:`exact_pmf` gets exact outcome probabilities for tiny ``t, n``.

The domain is always ``1..t`` and the stream length is ``n``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .rng import RandomTape, Tape, enumerate_outcomes, iter_chunks

CHUNK = 1 << 16


@dataclass(frozen=True)
class NeedleParams:
    t: int
    n: int
    p: float = 0.0

    def __post_init__(self):
        if int(self.t) != self.t or self.t < 1:
            raise ValueError(f"domain size t must be a positive integer, got {self.t!r}")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"stream length n must be a non-negative integer, got {self.n!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"needle probability p must lie in [0, 1], got {self.p!r}")

    def check_sample_regime(self) -> None:
        """The upper-bound experiments assume n <= t/100."""
        if self.n > self.t / 100:
            raise ValueError(f"n={self.n} exceeds t/100={self.t / 100}")


@dataclass(frozen=True)
class Label:
    kind: str
    alpha: int | None = None
    detail: dict = field(default_factory=dict, compare=False)

    @property
    def truth(self) -> int:
        """1 for needle-bearing distributions, 0 otherwise."""
        return int(self.kind in ("needle", "local_needle", "mostlyeq_eq"))


# --- models -----------------------------------------------------------------


class _Model:
    kind = ""
    length = 0
    t = 1

    def latent(self, tape: Tape):
        return None

    def chunk(self, tape: Tape, latent, start: int, size: int) -> np.ndarray:
        raise NotImplementedError

    def label(self, latent) -> Label:
        return Label(self.kind)

    def header(self) -> tuple[int, int, float]:
        return self.t, self.length, 0.0


class UniformModel(_Model):
    kind = "uniform"

    def __init__(self, params: NeedleParams):
        self.params = params
        self.t, self.length = params.t, params.n

    def chunk(self, tape, latent, start, size):
        return tape.integers(1, self.t + 1, size)

    def header(self):
        return self.t, self.length, self.params.p


class NeedleModel(UniformModel):
    kind = "needle"

    def latent(self, tape):
        return tape.integer(1, self.t + 1)

    def chunk(self, tape, alpha, start, size):
        hit = tape.bernoulli(self.params.p, size)
        base = tape.integers(1, self.t + 1, size)
        return np.where(hit, alpha, base)

    def label(self, alpha):
        return Label("needle", alpha)


class LocalNeedleModel(NeedleModel):
    """Positions in ``S`` (1-based) carry the needle with probability 1/2."""

    kind = "local_needle"

    def __init__(self, params: NeedleParams, S: Sequence[int]):
        super().__init__(params)
        S = sorted(set(int(s) for s in S))
        if S and (S[0] < 1 or S[-1] > params.n):
            raise ValueError(f"S must be a subset of [1, {params.n}]")
        self.S = tuple(S)
        self._mask = np.zeros(params.n, dtype=bool)
        if S:
            self._mask[np.asarray(S) - 1] = True

    def chunk(self, tape, alpha, start, size):
        coin = tape.bernoulli(0.5, size)
        base = tape.integers(1, self.t + 1, size)
        return np.where(coin & self._mask[start:start + size], alpha, base)

    def label(self, alpha):
        return Label("local_needle", alpha, {"S": self.S})


class CoinModel(_Model):
    kind = "coin"

    def __init__(self, n: int):
        if n < 0:
            raise ValueError("n must be non-negative")
        self.t, self.length = 2, n

    def chunk(self, tape, latent, start, size):
        return tape.integers(0, 2, size) * 2 - 1


class TurnstileModel(_Model):
    """``ceil(C*sqrt(n))`` leading +1 updates followed by ``n`` fair coins."""

    kind = "turnstile"

    def __init__(self, n: int, C: float):
        if C < 0:
            raise ValueError("C must be non-negative")
        self.n, self.C = n, C
        self.prefix = math.ceil(C * math.sqrt(n))
        self.t, self.length = 2, self.prefix + n

    def chunk(self, tape, latent, start, size):
        out = np.ones(size, dtype=np.int64)
        lo = max(self.prefix - start, 0)
        if lo < size:
            out[lo:] = tape.integers(0, 2, size - lo) * 2 - 1
        return out

    def label(self, latent):
        return Label("turnstile", None, {"prefix": self.prefix})


class TCoinsModel(_Model):
    """``t`` interleaved coin instances; update ``(x, s)`` is encoded as ``x * s``."""

    kind = "t_coins"

    def __init__(self, n: int, t: int, order="round_robin"):
        if n < 1 or t < 1:
            raise ValueError("n and t must be >= 1")
        self.n, self.t, self.length = n, t, n * t
        if isinstance(order, str):
            if order not in ("round_robin", "random"):
                raise ValueError(f"unknown order {order!r}")
            self.order_kind, self.order = order, None
        else:
            arr = np.asarray(order, dtype=np.int64)
            if arr.shape != (n * t,):
                raise ValueError(f"order must have length n*t={n * t}, got shape {arr.shape}")
            if arr.min() < 1 or arr.max() > t:
                raise ValueError("order labels must lie in [1, t]")
            self.order_kind, self.order = "explicit", arr

    def instances(self, tape, start, size):
        if self.order_kind == "round_robin":
            return (np.arange(start, start + size) % self.t) + 1
        if self.order_kind == "explicit":
            return self.order[start:start + size]
        return tape.integers(1, self.t + 1, size)

    def chunk(self, tape, latent, start, size):
        s = self.instances(tape, start, size)
        x = tape.integers(0, 2, size) * 2 - 1
        return x * s

    def label(self, latent):
        return Label("t_coins", None, {"order": self.order_kind})


class MostlyEqModel(_Model):
    def __init__(self, m: int, t: int, which: str):
        if m < 1 or t < 1:
            raise ValueError("m and t must be >= 1")
        if which not in ("P_U", "P_Eq"):
            raise ValueError("which must be 'P_U' or 'P_Eq'")
        self.t, self.length, self.which = t, m, which
        self.kind = "mostlyeq_eq" if which == "P_Eq" else "mostlyeq_u"

    def latent(self, tape):
        return tape.integer(1, self.t + 1) if self.which == "P_Eq" else None

    def chunk(self, tape, alpha, start, size):
        if alpha is None:
            return tape.integers(1, self.t + 1, size)
        coin = tape.bernoulli(0.5, size)
        base = tape.integers(1, self.t + 1, size)
        return np.where(coin, alpha, base)

    def label(self, alpha):
        return Label(self.kind, alpha)


# --- labelled streams -------------------------------------------------------


class LabeledStream:
    """A reproducible stream: ``(model, seed)`` fully determines every item.

    Iterating yields Python ints one at a time; :meth:`cursor` hands out
    numpy blocks for vectorised consumers.  Nothing is materialised until
    asked for.
    """

    def __init__(self, model: _Model, seed: int, stream_id: object = "stream"):
        self.model = model
        self.seed = int(seed)
        self.stream_id = stream_id
        self.latent = model.latent(RandomTape.keyed(self.seed, (stream_id, "latent")))
        self.label = model.label(self.latent)

    def __len__(self) -> int:
        return self.model.length

    @property
    def t(self) -> int:
        return self.model.t

    @property
    def alpha(self):
        return self.label.alpha

    def _chunk(self, c: int, start: int, size: int) -> np.ndarray:
        tape = RandomTape.keyed(self.seed, self.stream_id, c)
        return np.asarray(self.model.chunk(tape, self.latent, start, size), dtype=np.int64)

    def chunks(self) -> Iterator[np.ndarray]:
        for c, start, size in iter_chunks(len(self), CHUNK):
            yield self._chunk(c, start, size)

    def __iter__(self) -> Iterator[int]:
        for block in self.chunks():
            yield from block.tolist()

    def cursor(self) -> "StreamCursor":
        return StreamCursor(self)

    def to_array(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(list(self.chunks()))

    def __repr__(self):
        return f"LabeledStream({self.model.kind}, n={len(self)}, seed={self.seed})"


class StreamCursor:
    """Single-consumer read head over a :class:`LabeledStream`."""

    def __init__(self, stream):
        self._chunks = stream.chunks() if isinstance(stream, LabeledStream) else iter([np.asarray(stream, dtype=np.int64)])
        self._buf = np.zeros(0, dtype=np.int64)
        self.position = 0
        self.length = len(stream)

    @property
    def remaining(self) -> int:
        return self.length - self.position

    def take(self, k: int) -> np.ndarray:
        """Next ``k`` items (fewer only if the stream runs out)."""
        parts = [self._buf]
        have = len(self._buf)
        while have < k:
            try:
                nxt = next(self._chunks)
            except StopIteration:
                break
            parts.append(nxt)
            have += len(nxt)
        buf = np.concatenate(parts) if len(parts) > 1 else parts[0]
        out, self._buf = buf[:k], buf[k:]
        self.position += len(out)
        return out

    def __iter__(self):
        return self

    def __next__(self) -> int:
        got = self.take(1)
        if len(got) == 0:
            raise StopIteration
        return int(got[0])


# --- public generators ------------------------------------------------------


def gen_uniform(params: NeedleParams, seed: int) -> LabeledStream:
    return LabeledStream(UniformModel(params), seed)


def gen_needle(params: NeedleParams, seed: int) -> LabeledStream:
    return LabeledStream(NeedleModel(params), seed)


def gen_local_needle(params: NeedleParams, S: Sequence[int], seed: int) -> LabeledStream:
    return LabeledStream(LocalNeedleModel(params, S), seed)


def gen_coin(n: int, seed: int) -> LabeledStream:
    return LabeledStream(CoinModel(n), seed)


def gen_strict_turnstile_counter(n: int, C: float, seed: int) -> LabeledStream:
    return LabeledStream(TurnstileModel(n, C), seed)


def gen_t_coins(n: int, t: int, k: int, order="round_robin", seed: int = 0) -> LabeledStream:
    stream = LabeledStream(TCoinsModel(n, t, order), seed)
    stream.k = k
    return stream


def gen_mostlyeq(m: int, t: int, which: str, seed: int) -> LabeledStream:
    return LabeledStream(MostlyEqModel(m, t, which), seed)


def went_negative(stream: LabeledStream) -> bool:
    """True iff the running sum of a +/-1 update stream ever dips below 0."""
    total = 0
    for block in stream.chunks():
        run = total + np.cumsum(block)
        if len(run) and run.min() < 0:
            return True
        if len(run):
            total = int(run[-1])
    return False


def order_of(stream: LabeledStream) -> np.ndarray:
    """Instance labels ``s_j`` of a t-coins stream."""
    return np.abs(stream.to_array())


def is_good(order: Sequence[int], n: int, t: int, k: int) -> bool:
    """Check both good-order conditions on an order of ``n*t`` instance labels."""
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n * t,):
        raise ValueError(f"order must have length n*t={n * t}, got shape {order.shape}")
    pos = np.arange(1, n * t + 1)
    u_min = math.ceil(math.sqrt(n))
    for s in range(1, t + 1):
        q = pos[order == s]
        if len(q) < n / 2:
            return False
        # consecutive positions differ by >= 1, so any window of u gaps spans
        # >= u; the spacing condition can only bind when k/2 > 1
        if k / 2 <= 1:
            continue
        for u in range(u_min, len(q)):
            if (q[u:] - q[:-u]).min() < k * u / 2:
                return False
    return True


def exact_pmf(model: _Model, with_latent: bool = False) -> dict:
    """Exact distribution of a model's output by walking its randomness tree."""

    def draw(tape):
        lat = model.latent(tape)
        items = tuple(int(v) for v in model.chunk(tape, lat, 0, model.length)) if model.length else ()
        return (lat, items) if with_latent else items

    return enumerate_outcomes(draw)


# --- serialization ----------------------------------------------------------

MAGIC = b"NDL1"


def write_text(stream, path, header: tuple[int, int, float] | None = None) -> None:
    """One integer per line, preceded by ``#`` metadata lines."""
    t, n, p = header if header is not None else stream.model.header()
    with open(path, "w") as fh:
        fh.write(f"# t={t} n={n} p={p!r}\n")
        for block in (stream.chunks() if isinstance(stream, LabeledStream) else [np.asarray(stream)]):
            fh.write("".join(f"{int(v)}\n" for v in block))


def read_text(path) -> tuple[dict, np.ndarray]:
    meta, items = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        meta[key] = float(val) if key == "p" else int(val)
                continue
            items.append(int(line))
    return meta, np.asarray(items, dtype=np.int64)


def write_binary(stream, path, header: tuple[int, int, float] | None = None) -> None:
    """``NDL1`` | u64 t | u64 n | f64 p | u64 items, all little-endian.

    Negative items (coin streams) are stored as the two's-complement bit
    pattern of the signed 64-bit value.
    """
    t, n, p = header if header is not None else stream.model.header()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<QQd", t, n, p))
        for block in (stream.chunks() if isinstance(stream, LabeledStream) else [np.asarray(stream)]):
            fh.write(np.asarray(block, dtype="<i8").tobytes())


def read_binary(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError("not an NDL1 file")
    t, n, p = struct.unpack("<QQd", raw[4:28])
    items = np.frombuffer(raw[28:], dtype="<i8").astype(np.int64)
    if len(items) != n:
        raise ValueError(f"header says n={n} but file holds {len(items)} items")
    return {"t": t, "n": n, "p": p}, items
