"""Turning a k-pass algorithm into a one-pass one, and a k-pass needle
algorithm into an m-party protocol, on instances small enough to enumerate.

One-pass imitation
    Draw the end-of-pass states first, then walk the input once.  At step
    ``j`` the imitator knows the column ``c = (M(1,j-1), ..., M(k,j-1))`` and
    the end states ``e``; ``beta = Pr[X_j = 1 | c, e] - 1/2`` says how far the
    real algorithm's input is biased there.  The fresh uniform bit ``y`` is
    nudged towards that bias (only in the needed direction, with probability
    ``2|beta|``) and the next column is sampled from its exact posterior.  The
    resulting ``(X', e, columns)`` has exactly the law of the real run.

Approximate correction
    The one-pass simulator also keeps an approximate sum of the nudges
    ``y - x'`` so that ``sum y`` can be recovered from ``sum x'``.

Party protocol
    Players holding the pinned positions of a local-needle stream fill the
    gaps with uniform items and pass memory snapshots around, pass by pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .apr import AprConfig, apr_init, apr_output, apr_step
from .infocost import EnumerationBudgetError, JointTable, build_joint, mcol, xcol
from .kpass import KPassAlgorithm, run_k_pass
from .rng import RandomTape, Tape, enumerate_outcomes


def _order(values):
    return sorted(values, key=repr)


@dataclass
class ConditionalOracle:
    """Exact conditionals of a k-pass algorithm under uniform +/-1 input.

    ``ends``: ``{e: Pr[E = e]}`` with ``e = (M(1,0), ..., M(k,0))``;
    ``beta[j][(c, e)]`` and ``posterior[j][(c, e, x)] = {c': prob}`` for the
    column ``c = (M(1,j-1), ..., M(k,j-1))``.
    """

    n: int
    k: int
    ends: dict
    beta: list
    posterior: list
    table: JointTable = field(repr=False)
    alg_name: str = ""

    def end_entropy(self) -> float:
        """Entropy in bits of the end-of-pass states ``M_<k``."""
        return max(0.0, -math.fsum(w * math.log2(w) for w in self.ends.values() if w > 0))

    def dump(self) -> str:
        """Plain-text listing of every table (one record per line)."""
        out = [f"# oracle alg={self.alg_name} n={self.n} k={self.k}"]
        for e in _order(self.ends):
            out.append(f"end {e!r} {self.ends[e]!r}")
        for j in range(1, self.n + 1):
            for key in _order(self.beta[j]):
                out.append(f"beta {j} {key[0]!r} {key[1]!r} {self.beta[j][key]!r}")
            for key in _order(self.posterior[j]):
                for c2 in _order(self.posterior[j][key]):
                    out.append(f"post {j} {key[0]!r} {key[1]!r} {key[2]} {c2!r} {self.posterior[j][key][c2]!r}")
        return "\n".join(out) + "\n"


def build_conditional_oracle(alg: KPassAlgorithm, n: int, k: int | None = None,
                             budget: int = 1 << 24) -> ConditionalOracle:
    k = alg.k if k is None else k
    table = build_joint(alg, 0.5, n, k, budget=budget)
    idx = table.index
    e_cols = [idx[mcol(i, 0)] for i in range(1, k + 1)]
    col = [[idx[mcol(i, j)] for i in range(1, k + 1)] for j in range(n + 1)]
    x_cols = [None] + [idx[xcol(j)] for j in range(1, n + 1)]
    ends: dict = {}
    for key, w in table.atoms.items():
        e = tuple(key[c] for c in e_cols)
        ends[e] = ends.get(e, 0.0) + w
    beta = [None]
    posterior = [None]
    for j in range(1, n + 1):
        mass, ones, post = {}, {}, {}
        for key, w in table.atoms.items():
            e = tuple(key[c] for c in e_cols)
            c_prev = tuple(key[c] for c in col[j - 1])
            c_next = tuple(key[c] for c in col[j])
            x = key[x_cols[j]]
            mass[(c_prev, e)] = mass.get((c_prev, e), 0.0) + w
            if x == 1:
                ones[(c_prev, e)] = ones.get((c_prev, e), 0.0) + w
            row = post.setdefault((c_prev, e, x), {})
            row[c_next] = row.get(c_next, 0.0) + w
        beta.append({ce: ones.get(ce, 0.0) / m - 0.5 for ce, m in mass.items()})
        for key, row in post.items():
            tot = math.fsum(row.values())
            post[key] = {c: w / tot for c, w in row.items()}
        posterior.append(post)
    return ConditionalOracle(n, k, ends, beta, posterior, table, alg.name)


@dataclass
class SimTranscript:
    ends: tuple
    y: tuple
    beta: tuple
    x: tuple
    columns: tuple
    apr: object = None

    @property
    def modifications(self) -> int:
        return sum(a != b for a, b in zip(self.y, self.x))


def _nudge(tape: Tape, y: int, beta: float) -> int:
    """Move ``y`` towards the required bias; flips happen with prob ``2|beta|``."""
    if beta > 0:
        if y == 1:
            return 1
        q = 2 * beta
        return 1 if q >= 1 or (q > 0 and tape.bernoulli(q, 1)[0]) else -1
    if y == -1:
        return -1
    q = -2 * beta
    return -1 if q >= 1 or (q > 0 and tape.bernoulli(q, 1)[0]) else 1


def im_simulate(oracle: ConditionalOracle, Y: Sequence[int] | None, tape: Tape | int = 0) -> SimTranscript:
    """One-pass imitation of all k passes on input ``Y`` (drawn from the tape
    when ``None``)."""
    if not isinstance(tape, Tape):
        tape = RandomTape.keyed(int(tape), "im")
    n = oracle.n
    if Y is None:
        Y = tuple(1 if tape.categorical([0.5, 0.5]) else -1 for _ in range(n))
    Y = tuple(int(v) for v in Y)
    if len(Y) != n or any(v not in (-1, 1) for v in Y):
        raise ValueError(f"Y must be {n} bits in {{-1, 1}}")
    ends = _order(oracle.ends)
    e = ends[tape.categorical([oracle.ends[v] for v in ends])]
    c = e
    betas, xs, cols = [], [], [c]
    for j in range(1, n + 1):
        b = oracle.beta[j][(c, e)]
        x = _nudge(tape, Y[j - 1], b)
        row = oracle.posterior[j][(c, e, x)]
        nxt = _order(row)
        c = nxt[tape.categorical([row[v] for v in nxt])] if len(nxt) > 1 else nxt[0]
        betas.append(b)
        xs.append(x)
        cols.append(c)
    return SimTranscript(e, Y, tuple(betas), tuple(xs), tuple(cols))


def im_law(oracle: ConditionalOracle) -> dict:
    """Exact law of ``(Y, X', e, columns)`` under uniform ``Y``."""

    def draw(tape):
        tr = im_simulate(oracle, None, tape)
        return tr.y, tr.x, tr.ends, tr.columns

    return enumerate_outcomes(draw)


def native_law(oracle: ConditionalOracle) -> dict:
    """Exact law of ``(X, e, columns)`` for the real algorithm."""
    n, k, t = oracle.n, oracle.k, oracle.table
    idx = t.index
    out: dict = {}
    for key, w in t.atoms.items():
        x = tuple(key[idx[xcol(j)]] for j in range(1, n + 1))
        e = tuple(key[idx[mcol(i, 0)]] for i in range(1, k + 1))
        cols = tuple(tuple(key[idx[mcol(i, j)]] for i in range(1, k + 1)) for j in range(n + 1))
        out[(x, e, cols)] = out.get((x, e, cols), 0.0) + w
    return out


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(a, 0.0) - q.get(a, 0.0)) for a in keys)


@dataclass
class FidelityReport:
    tv: float
    expected_modifications: float
    modification_budget: float
    end_entropy: float

    @property
    def ok(self) -> bool:
        return self.tv <= 1e-9 and self.expected_modifications <= self.modification_budget + 1e-12


def simulation_fidelity(oracle: ConditionalOracle) -> FidelityReport:
    law = im_law(oracle)
    sim: dict = {}
    mods = []
    for (y, x, e, cols), w in law.items():
        sim[(x, e, cols)] = sim.get((x, e, cols), 0.0) + w
        mods.append(w * sum(a != b for a, b in zip(y, x)))
    H = oracle.end_entropy()
    return FidelityReport(total_variation(sim, native_law(oracle)), math.fsum(mods),
                          math.sqrt(oracle.n * H), H)


def im_table(oracle: ConditionalOracle) -> JointTable:
    """The imitator viewed as a one-pass algorithm: columns ``Y1..Yn``,
    ``X'1..X'n`` and its memory ``O0..On`` = (end states, current column)."""
    n = oracle.n
    law = im_law(oracle)
    cols = [f"Y{j}" for j in range(1, n + 1)] + [f"X'{j}" for j in range(1, n + 1)] + [f"O{j}" for j in range(n + 1)]
    atoms = {}
    for (y, x, e, cs), w in law.items():
        key = y + x + tuple((e, c) for c in cs)
        atoms[key] = atoms.get(key, 0.0) + w
    return JointTable(cols, atoms, {"n": n, "k": 1, "s": None})


def o_simulate(oracle: ConditionalOracle, Y: Sequence[int], apr_cfg: AprConfig, seed: int = 0,
               estimate: Callable | None = None):
    """One-pass sum estimate of ``Y``.

    The nudges ``y - x'`` lie in {-2, 0, 2}; the approximate counter is fed
    ``(y - x') / 2`` and its output doubled.  ``estimate(column)`` reads
    ``sum x'`` off the imitated final column (default: the last pass's
    state).
    """
    if apr_cfg.n != oracle.n:
        raise ValueError("approximate-counter length must match the stream")
    tape = RandomTape.keyed(int(seed), "o-sim")
    tr = im_simulate(oracle, Y, tape)
    coins = RandomTape.keyed(int(seed), "o-apr")
    st = apr_init(apr_cfg)
    for y, x in zip(tr.y, tr.x):
        r = 1 if st.p_sample >= 1.0 else int(coins.bernoulli(st.p_sample, 1)[0])
        st = apr_step(st, (y - x) // 2, r)
    tr.apr = st
    est = estimate or (lambda col: col[-1])
    return tr, float(est(tr.columns[-1])) + 2 * apr_output(st)


# --- the MostlyEq protocol -------------------------------------------------------


@dataclass
class ProtocolRun:
    output: object
    stream: tuple
    messages: list


def mostlyeq_protocol(alg: KPassAlgorithm, S: Sequence[int], z: Sequence[int], t: int, n: int,
                      tape: Tape | int = 0) -> ProtocolRun:
    """Players ``1..m`` hold ``z``; player ``j`` pins ``X_{p_j} = z_j`` and
    fills the gap up to the next pinned position with uniform items (player
    ``m`` also fills the wrap-around gap).  Memory snapshots travel from
    player to player for passes ``1..k-1``; the final pass must leave the
    memory untouched, so player ``m`` can answer."""
    if not alg.frozen_last_pass:
        raise ValueError("the final pass must not change the memory; wrap the algorithm with with_frozen_pass")
    if not isinstance(tape, Tape):
        tape = RandomTape.keyed(int(tape), "protocol")
    S = [int(s) for s in S]
    if S != sorted(set(S)) or not S or S[0] < 1 or S[-1] > n:
        raise ValueError("S must be a non-empty sorted subset of [1, n]")
    if len(z) != len(S):
        raise ValueError("one input per player")
    m = len(S)
    X = [0] * (n + 1)
    for j in range(m):
        X[S[j]] = int(z[j])
        end = S[j + 1] if j + 1 < m else n + 1
        for pos in range(S[j] + 1, end):
            X[pos] = tape.integer(1, t + 1)
    for pos in range(1, S[0]):
        X[pos] = tape.integer(1, t + 1)

    def run(i, lo, hi, state):
        for pos in range(lo, hi + 1):
            r = alg.randomness[tape.categorical([p for _, p in alg.randomness])][0] if not alg.is_deterministic else None
            state = alg.step(i, pos, X[pos], state, r)
        return state

    msgs = []
    state = run(1, 1, S[0] - 1, alg.initial_state)  # player m, prefix of pass 1
    msgs.append((m, 1, state))
    for i in range(1, alg.k):
        for j in range(m):
            if j + 1 < m:
                state = run(i, S[j], S[j + 1] - 1, state)
            else:
                state = run(i, S[j], n, state)
                state = run(i + 1, 1, S[0] - 1, state)
            msgs.append((j + 1, (j + 2) if j + 1 < m else 1, state))
    return ProtocolRun(alg.output(state), tuple(X[1:]), msgs)


def protocol_error(alg: KPassAlgorithm, S: Sequence[int], t: int, n: int) -> float:
    """Exact ``Pr[out=1 | z ~ P_U] + Pr[out=0 | z ~ P_Eq]``."""
    from .streams import MostlyEqModel

    def arm(which):
        model = MostlyEqModel(len(S), t, which)

        def draw(tape):
            lat = model.latent(tape)
            z = model.chunk(tape, lat, 0, len(S))
            return int(mostlyeq_protocol(alg, S, z, t, n, tape).output)

        return enumerate_outcomes(draw)

    return arm("P_U").get(1, 0.0) + arm("P_Eq").get(0, 0.0)


def algorithm_error(alg: KPassAlgorithm, S: Sequence[int], t: int, n: int) -> float:
    """Exact ``Pr[out=1 | D0] + Pr[out=0 | D^S]`` for the streaming algorithm."""
    from .streams import LocalNeedleModel, NeedleParams, UniformModel

    params = NeedleParams(t, n, 0.0)

    def arm(model):
        def draw(tape):
            lat = model.latent(tape)
            x = tuple(int(v) for v in model.chunk(tape, lat, 0, n))
            return int(run_k_pass(alg, x, record=False, tape=tape).output)

        return enumerate_outcomes(draw)

    return arm(UniformModel(params)).get(1, 0.0) + arm(LocalNeedleModel(params, S)).get(0, 0.0)


def protocol_stream_law(alg: KPassAlgorithm, S: Sequence[int], t: int, n: int, which: str = "P_Eq") -> dict:
    """Exact law of the stream the protocol assembles when ``z`` follows
    ``which``."""
    from .streams import MostlyEqModel

    model = MostlyEqModel(len(S), t, which)

    def draw(tape):
        lat = model.latent(tape)
        z = model.chunk(tape, lat, 0, len(S))
        return mostlyeq_protocol(alg, S, z, t, n, tape).stream

    return enumerate_outcomes(draw)


# --- a toy needle algorithm for the protocol ------------------------------------


def first_repeat(t: int, n: int) -> KPassAlgorithm:
    """One pass: remember ``X_1`` and whether it shows up again."""
    bits = max(1, t.bit_length()) + 1

    def step(i, j, x, m, r):
        first, seen = m
        if j == 1:
            return (x, 0)
        return (first, int(seen or x == first))

    return KPassAlgorithm("first_repeat", 1, bits, (0, 0), step, lambda m: m[1], meta={"n": n})


def pair_check(t: int, n: int) -> KPassAlgorithm:
    """Two passes: pass 1 remembers the last item; pass 2 flags any item
    equal to it (other than at the last position)."""
    bits = max(1, t.bit_length()) + 1

    def step(i, j, x, m, r):
        last, seen = m
        if i == 1:
            return (x, 0)
        return (last, int(seen or (j < n and x == last)))

    return KPassAlgorithm("pair_check", 2, bits, (0, 0), step, lambda m: m[1], meta={"n": n})
