"""Bounded-memory k-pass streaming algorithms as explicit state machines.

An algorithm reads its input ``k`` times in order.  ``m[i][j]`` is the memory
after item ``j`` of pass ``i`` (both 1-based in the maths, 0-based in the
grid below), and the first state of each pass is the last state of the
previous one.  Randomness is an explicit per-step draw from a finite
alphabet so that the same code can be run on a random tape or walked
exhaustively by :func:`needlestream.rng.enumerate_outcomes`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Hashable, Sequence

import numpy as np

from .rng import Tape

DETERMINISTIC = ((None, 1.0),)


class StateOverflowError(ValueError):
    """A transition produced a state wider than the declared memory."""


def state_bits(m) -> int:
    """Encoded width of a memory state.

    Integers use their binary length (at least one bit) plus a sign bit when
    negative; booleans and ``None`` take one bit; tuples are the sum of their
    fields.
    """
    if m is None or isinstance(m, (bool, np.bool_)):
        return 1
    if isinstance(m, (int, np.integer)):
        m = int(m)
        return max(1, abs(m).bit_length()) + (m < 0)
    if isinstance(m, tuple):
        return sum(state_bits(v) for v in m) if m else 1
    raise TypeError(f"cannot size memory state of type {type(m).__name__}")


@dataclass(frozen=True)
class KPassAlgorithm:
    """A k-pass algorithm ``m' = step(i, j, x, m, r)`` with passes ``i`` in
    ``1..k`` and positions ``j`` in ``1..n``.

    ``randomness`` lists ``(value, probability)`` pairs drawn independently
    at every step; deterministic algorithms use a single value.
    """

    name: str
    k: int
    memory_bits: int
    initial_state: Hashable
    step: Callable[[int, int, Any, Any, Any], Any]
    output: Callable[[Any], Any] = lambda m: m
    randomness: tuple = DETERMINISTIC
    frozen_last_pass: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("an algorithm needs at least one pass")
        if self.memory_bits < 1:
            raise ValueError("memory_bits must be positive")
        total = sum(p for _, p in self.randomness)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"randomness probabilities sum to {total}, not 1")

    @property
    def is_deterministic(self) -> bool:
        return len(self.randomness) == 1


@dataclass
class Transcript:
    """Memory grid ``states[i][j]`` (pass ``i`` 0-based, ``j`` in ``0..n``)."""

    states: list
    output: Any
    peak_bits: int
    inputs: tuple = ()
    rand: tuple = ()

    @property
    def k(self) -> int:
        return len(self.states)

    @property
    def n(self) -> int:
        return len(self.states[0]) - 1 if self.states else 0

    def m(self, i: int, j: int):
        """State ``M_(i,j)`` with 1-based pass index; ``M_(i,0) = M_(i-1,n)``."""
        if i == 0:
            raise IndexError("pass index is 1-based")
        return self.states[i - 1][j]

    def final(self):
        return self.states[-1][-1]


def _draw(alg: KPassAlgorithm, tape, i: int, j: int):
    if alg.is_deterministic:
        return alg.randomness[0][0]
    if isinstance(tape, Tape):
        idx = tape.categorical([p for _, p in alg.randomness])
    elif tape is None:
        raise ValueError(f"algorithm {alg.name!r} is randomized; supply a tape")
    else:
        idx = int(tape[i - 1][j - 1])
    return alg.randomness[idx][0]


def run_k_pass(alg: KPassAlgorithm, stream, record: bool = True, tape=None, n: int | None = None) -> Transcript:
    """Run ``alg`` over ``stream`` for all of its passes.

    ``stream`` may be any re-iterable sequence (a :class:`LabeledStream`
    replays deterministically).  ``tape`` is a :class:`Tape` or a ``(k, n)``
    array of indices into ``alg.randomness``.  With ``record=False`` only the
    running state is kept; the peak width is tracked either way.
    """
    if n is not None and len(stream) != n:
        raise ValueError(f"stream has length {len(stream)}, algorithm expects {n}")
    if "n" in alg.meta and len(stream) != alg.meta["n"]:
        raise ValueError(f"stream has length {len(stream)}, algorithm expects {alg.meta['n']}")
    m = alg.initial_state
    peak = state_bits(m)
    _check_width(alg, m, 0, 0)
    rows = []
    xs = [] if record else None
    rs = [] if record else None
    for i in range(1, alg.k + 1):
        row = [m] if record else None
        rrow = [] if record else None
        for j, x in enumerate(stream, start=1):
            r = _draw(alg, tape, i, j)
            m = alg.step(i, j, x, m, r)
            w = _check_width(alg, m, i, j)
            peak = max(peak, w)
            if record:
                row.append(m)
                rrow.append(r)
                if i == 1:
                    xs.append(x)
        if record:
            rows.append(row)
            rs.append(tuple(rrow))
    if not record:
        rows = [[m]]
    return Transcript(rows, alg.output(m), peak, tuple(xs or ()), tuple(rs or ()))


def _check_width(alg, m, i, j) -> int:
    w = state_bits(m)
    if w > alg.memory_bits:
        raise StateOverflowError(
            f"{alg.name}: state {m!r} at pass {i}, index {j} needs {w} bits > {alg.memory_bits}")
    return w


def peak_memory_bits(transcript: Transcript) -> int:
    """Widest state in a recorded transcript."""
    return max(state_bits(m) for row in transcript.states for m in row)


def with_frozen_pass(alg: KPassAlgorithm) -> KPassAlgorithm:
    """Append a pass that leaves the memory untouched."""
    k = alg.k

    def step(i, j, x, m, r):
        return m if i > k else alg.step(i, j, x, m, r)

    return replace(alg, name=f"{alg.name}+frozen", k=k + 1, step=step, frozen_last_pass=True)


# --- the toy zoo -------------------------------------------------------------
# All zoo algorithms read +/-1 bits.


def constant(k: int = 1) -> KPassAlgorithm:
    return KPassAlgorithm("constant", k, 1, 0, lambda i, j, x, m, r: m, lambda m: 0)


def store_first(k: int = 1) -> KPassAlgorithm:
    """Remember X_1 (0 until it is read)."""

    def step(i, j, x, m, r):
        return x if (i == 1 and j == 1) else m

    return KPassAlgorithm("store_first", k, 2, 0, step, lambda m: int(m > 0))


def sum_mod(s: int = 2, k: int = 1) -> KPassAlgorithm:
    """Running count of +1 items modulo 2^s, accumulated over every pass."""
    mod = 1 << s

    def step(i, j, x, m, r):
        return (m + (x > 0)) % mod

    return KPassAlgorithm(f"sum_mod{mod}", k, s, 0, step, lambda m: m)


def threshold(c: int = 2, k: int = 1) -> KPassAlgorithm:
    """Saturating count of +1 items in the first pass; outputs 1 once it reaches ``c``."""
    bits = max(1, c.bit_length())

    def step(i, j, x, m, r):
        return min(m + (x > 0), c) if i == 1 else m

    return KPassAlgorithm(f"threshold{c}", k, bits, 0, step, lambda m: int(m >= c))


def sampled_counter(cap: int = 3, k: int = 1) -> KPassAlgorithm:
    """Adds each +1 item with probability 1/2 (first pass only), saturating at ``cap``."""
    bits = max(1, cap.bit_length())

    def step(i, j, x, m, r):
        return min(m + (x > 0 and r == 1), cap) if i == 1 else m

    return KPassAlgorithm(f"sampled{cap}", k, bits, 0, step, lambda m: m,
                          randomness=((0, 0.5), (1, 0.5)))


def exact_sum(n: int, k: int = 1) -> KPassAlgorithm:
    """Exact running sum of the first pass; later passes leave it alone."""
    bits = max(1, n.bit_length()) + 1

    def step(i, j, x, m, r):
        return m + x if i == 1 else m

    return KPassAlgorithm("exact_sum", k, bits, 0, step, lambda m: 1 if m >= 0 else -1)


def majority_bit_only(n: int) -> KPassAlgorithm:
    """Counts exactly, then keeps only the sign of the total at the last item."""
    bits = max(1, n.bit_length()) + 1

    def step(i, j, x, m, r):
        m = m + x
        return (1 if m >= 0 else -1) if j == n else m

    return KPassAlgorithm("majority_bit_only", 1, bits, 0, step, lambda m: m)


def parity_compare() -> KPassAlgorithm:
    """Two passes: the first computes the parity P of the +1 count; the
    second carries ``2P + (P xor prefix parity)`` and outputs P."""

    def step(i, j, x, m, r):
        b = int(x > 0)
        if i == 1:
            return m ^ b
        if j == 1:
            P, pre = m, b
        else:
            P, pre = m >> 1, (m & 1) ^ (m >> 1) ^ b
        return 2 * P + (P ^ pre)

    return KPassAlgorithm("parity_compare", 2, 2, 0, step, lambda m: m >> 1)


ZOO = {
    "constant": lambda n, k: constant(k),
    "store_first": lambda n, k: store_first(k),
    "sum_mod4": lambda n, k: sum_mod(2, k),
    "threshold2": lambda n, k: threshold(2, k),
}


# --- transition tables -------------------------------------------------------


def load_table(path_or_text: str) -> KPassAlgorithm:
    """Parse a deterministic algorithm from a transition-table text.

    Format (``#`` starts a comment)::

        name <id>
        passes <k>
        states <count>          # states are 0..count-1
        memory_bits <s>         # optional, default ceil(log2 count)
        initial <state>
        alphabet <x> <x> ...
        T <pass> <pos> <x> <state> <next>   # '*' matches anything
        O <state> <output>

    The first ``T`` row that matches wins; a missing match is an error.
    """
    text = path_or_text
    if "\n" not in text:
        with open(text) as fh:
            text = fh.read()
    hdr, rows, outs = {}, [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "T":
            if len(tok) != 6:
                raise ValueError(f"line {lineno}: T rows need 5 fields")
            rows.append(tuple(None if v == "*" else int(v) for v in tok[1:5]) + (int(tok[5]),))
        elif tok[0] == "O":
            outs[int(tok[1])] = int(tok[2])
        elif tok[0] == "alphabet":
            hdr["alphabet"] = tuple(int(v) for v in tok[1:])
        elif tok[0] == "name":
            hdr["name"] = tok[1]
        elif tok[0] in ("passes", "states", "memory_bits", "initial"):
            hdr[tok[0]] = int(tok[1])
        else:
            raise ValueError(f"line {lineno}: unknown directive {tok[0]!r}")
    for key in ("passes", "states", "initial"):
        if key not in hdr:
            raise ValueError(f"transition table lacks '{key}'")
    count = hdr["states"]
    bits = hdr.get("memory_bits", max(1, math.ceil(math.log2(count))) if count > 1 else 1)

    def step(i, j, x, m, r):
        for pi, pj, px, pm, nxt in rows:
            if (pi is None or pi == i) and (pj is None or pj == j) and (px is None or px == x) and (pm is None or pm == m):
                if not 0 <= nxt < count:
                    raise ValueError(f"transition to undeclared state {nxt}")
                return nxt
        raise KeyError(f"no transition for pass={i} pos={j} x={x} state={m}")

    alg = KPassAlgorithm(hdr.get("name", "table"), hdr["passes"], bits, hdr["initial"], step,
                         lambda m: outs.get(m, m), meta={"alphabet": hdr.get("alphabet", (-1, 1))})
    return alg


def dump_table(alg: KPassAlgorithm, n: int, alphabet: Sequence = (-1, 1)) -> str:
    """Explicit transition table of a deterministic algorithm over every
    reachable ``(pass, pos, x, state)``, in the :func:`load_table` format.

    States are relabelled ``0..count-1`` in order of discovery.
    """
    if not alg.is_deterministic:
        raise ValueError("only deterministic algorithms have a transition table")
    ids = {alg.initial_state: 0}
    lines, frontier = [], {alg.initial_state}
    for i in range(1, alg.k + 1):
        for j in range(1, n + 1):
            nxt = set()
            for m in sorted(frontier, key=lambda s: ids[s]):
                for x in alphabet:
                    m2 = alg.step(i, j, x, m, None)
                    ids.setdefault(m2, len(ids))
                    lines.append(f"T {i} {j} {x} {ids[m]} {ids[m2]}")
                    nxt.add(m2)
            frontier = nxt
    out = [f"name {alg.name}", f"passes {alg.k}", f"states {len(ids)}",
           f"initial 0", "alphabet " + " ".join(str(a) for a in alphabet)]
    out += lines
    for m, idx in ids.items():
        o = alg.output(m)
        if isinstance(o, (int, np.integer)):
            out.append(f"O {idx} {int(o)}")
    return "\n".join(out) + "\n"
