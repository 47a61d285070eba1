"""Exact information-complexity measures on small, fully enumerable instances.

A :class:`JointTable` holds the exact joint law of named discrete variables
(inputs ``X1..Xn``, randomness ``R``, memory states ``M(i,j)``).  Every
mutual-information quantity is computed from entropies of marginals,

    I(A; B | C) = H(A,C) + H(B,C) - H(A,B,C) - H(C),

in bits, with ``0 log 0 = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kpass import KPassAlgorithm, run_k_pass
from .rng import enumerate_outcomes

MAX_ATOMS = 1 << 24


class EnumerationBudgetError(RuntimeError):
    pass


def xcol(j: int) -> str:
    return f"X{j}"


def mcol(i: int, j: int) -> str:
    return f"M({i},{j})"


class JointTable:
    """Sparse exact joint distribution over named columns."""

    def __init__(self, columns: Sequence[str], atoms: dict, meta: dict | None = None, tol: float = 1e-12):
        self.columns = tuple(columns)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        self.index = {c: i for i, c in enumerate(self.columns)}
        merged: dict = {}
        for key, w in atoms.items():
            if len(key) != len(self.columns):
                raise ValueError(f"atom {key!r} does not match {len(self.columns)} columns")
            if w < 0:
                raise ValueError(f"negative mass {w} on {key!r}")
            if w > 0:
                merged[key] = merged.get(key, 0.0) + w
        total = math.fsum(merged.values())
        if abs(total - 1.0) > tol:
            raise ValueError(f"total mass {total!r} differs from 1")
        self.atoms = merged
        self.meta = dict(meta or {})
        self._h: dict = {}

    def __len__(self):
        return len(self.atoms)

    def _cols(self, names: Iterable[str]) -> tuple[int, ...]:
        try:
            return tuple(sorted({self.index[c] for c in names}))
        except KeyError as exc:
            raise KeyError(f"unknown column {exc.args[0]!r}; have {self.columns}") from None

    def marginal(self, names: Iterable[str]) -> dict:
        idx = self._cols(names)
        out: dict = {}
        for key, w in self.atoms.items():
            sub = tuple(key[i] for i in idx)
            out[sub] = out.get(sub, 0.0) + w
        return out

    def entropy(self, names: Iterable[str]) -> float:
        idx = self._cols(names)
        if idx not in self._h:
            if not idx:
                self._h[idx] = 0.0
            else:
                marg = self.marginal(self.columns[i] for i in idx)
                self._h[idx] = -math.fsum(w * math.log2(w) for w in marg.values() if w > 0)
        return self._h[idx]

    def expect(self, fn) -> float:
        """E[fn(row)] with ``row`` a dict of column values."""
        return math.fsum(w * fn(dict(zip(self.columns, key))) for key, w in self.atoms.items())

    def with_column(self, name: str, fn) -> "JointTable":
        """New table with a derived column ``name = fn(row)``."""
        atoms = {}
        for key, w in self.atoms.items():
            val = fn(dict(zip(self.columns, key)))
            atoms[key + (val,)] = atoms.get(key + (val,), 0.0) + w
        return JointTable(self.columns + (name,), atoms, self.meta)


def conditional_mi(table: JointTable, A: Iterable[str], B: Iterable[str], C: Iterable[str] = ()) -> float:
    """Exact I(A; B | C) in bits."""
    A, B, C = set(A), set(B), set(C)
    if A & B or A & C or B & C:
        raise ValueError("variable sets must be disjoint")
    H = table.entropy
    return H(A | C) + H(B | C) - H(A | B | C) - H(C)


# --- building joint laws ------------------------------------------------------


def _product_probs(mu, n: int) -> list[float]:
    """Per-position Pr[X_j = +1] for a product distribution over +/-1 bits."""
    if isinstance(mu, (int, float)):
        return [float(mu)] * n
    mu = [float(q) for q in mu]
    if len(mu) != n:
        raise ValueError(f"need {n} marginals, got {len(mu)}")
    return mu


def joint_columns(n: int, k: int) -> tuple[str, ...]:
    return tuple(xcol(j) for j in range(1, n + 1)) + ("R",) + tuple(
        mcol(i, j) for i in range(1, k + 1) for j in range(0, n + 1))


def build_joint(alg: KPassAlgorithm, mu=0.5, n: int = 3, k: int | None = None, budget: int = MAX_ATOMS) -> JointTable:
    """Exact joint law of ``(X, R, all M_(i,j))`` for +/-1 inputs drawn from
    the product distribution with ``Pr[X_j = +1] = mu[j]``."""
    k = alg.k if k is None else k
    if k != alg.k:
        raise ValueError(f"algorithm makes {alg.k} passes, not {k}")
    q = _product_probs(mu, n)
    size = (2 ** n) * len(alg.randomness) ** (k * n)
    if size > budget:
        raise EnumerationBudgetError(f"{size} atoms exceed the budget of {budget}")

    def draw(tape):
        x = tuple(1 if tape.categorical([1.0 - qj, qj]) == 1 else -1 for qj in q)
        tr = run_k_pass(alg, x, record=True, tape=tape)
        grid = tuple(m for row in tr.states for m in row)
        return x + (tr.rand if not alg.is_deterministic else (),) + grid

    pmf = enumerate_outcomes(draw, max_paths=budget)
    return JointTable(joint_columns(n, k), pmf, {"n": n, "k": k, "s": alg.memory_bits, "alg": alg.name})


# --- the measures -------------------------------------------------------------


@dataclass
class MICReport:
    mic: float
    mic_cond: float
    bound_2ksn: float
    terms: dict = field(default_factory=dict)

    @property
    def min_term(self) -> float:
        return min(self.terms.values(), default=0.0)

    def to_json(self) -> str:
        return json.dumps({"mic": self.mic, "mic_cond": self.mic_cond, "bound_2ksn": self.bound_2ksn,
                           "terms": self.terms}, indent=2, sort_keys=True)


def _nk(table: JointTable) -> tuple[int, int]:
    return table.meta["n"], table.meta["k"]


def mic_terms(table: JointTable) -> dict:
    """Every term of the multi-pass information cost, keyed ``"i,j,l"``.

    For ``l <= j`` the conditioning is ``M(<=i, l-1), M(<=i-1, j)``; for
    ``l > j`` it is ``M(<=i-1, l-1), M(<=i-1, j)``.
    """
    n, k = _nk(table)
    terms = {}
    for i in range(1, k + 1):
        for j in range(1, n + 1):
            target = [mcol(i, j)]
            before_j = [mcol(a, j) for a in range(1, i)]
            for l in range(1, n + 1):
                top = i if l <= j else i - 1
                cond = set(mcol(a, l - 1) for a in range(1, top + 1)) | set(before_j)
                cond.discard(target[0])
                terms[f"{i},{j},{l}"] = conditional_mi(table, target, [xcol(l)], cond)
    return terms


def mic_cond_terms(table: JointTable) -> dict:
    """Terms ``I(M(<=k, j); X_l | M_<k, M(<=k, l-1))`` for ``l <= j``.

    The end-of-pass states ``M_<k`` are the pass-start columns ``M(i,0)``.
    """
    n, k = _nk(table)
    ends = {mcol(i, 0) for i in range(1, k + 1)}
    terms = {}
    for j in range(1, n + 1):
        target = [mcol(i, j) for i in range(1, k + 1)]
        for l in range(1, j + 1):
            cond = ends | {mcol(i, l - 1) for i in range(1, k + 1)}
            terms[f"{j},{l}"] = conditional_mi(table, target, [xcol(l)], cond)
    return terms


def mic(table: JointTable) -> MICReport:
    n, k = _nk(table)
    t1 = mic_terms(table)
    t2 = mic_cond_terms(table)
    terms = {f"mic:{key}": v for key, v in t1.items()}
    terms.update({f"mic_cond:{key}": v for key, v in t2.items()})
    return MICReport(math.fsum(t1.values()), math.fsum(t2.values()), 2 * k * table.meta["s"] * n, terms)


def mic_cond(table: JointTable) -> MICReport:
    return mic(table)


def one_pass_ic(table: JointTable, state: str = "M(1,{j})", inputs: str = "X{j}") -> float:
    """``sum_j sum_{l<=j} I(O_j; X_l | O_{l-1})`` for a one-pass algorithm."""
    n, k = _nk(table)
    if k != 1:
        raise ValueError("one-pass information cost needs a single-pass table")
    total = []
    for j in range(1, n + 1):
        for l in range(1, j + 1):
            total.append(conditional_mi(table, [state.format(j=j)], [inputs.format(j=l)], [state.format(j=l - 1)]))
    return math.fsum(total)


def variance_reduction(table: JointTable, state: str | None = None) -> float:
    """``E_m[(E[sum_j X_j | M(k,n) = m])^2]`` over +/-1 inputs."""
    n, k = _nk(table)
    state = state or mcol(k, n)
    si = table.index[state]
    xi = [table.index[xcol(j)] for j in range(1, n + 1)]
    mass: dict = {}
    moment: dict = {}
    for key, w in table.atoms.items():
        m = key[si]
        mass[m] = mass.get(m, 0.0) + w
        moment[m] = moment.get(m, 0.0) + w * sum(key[i] for i in xi)
    return math.fsum(moment[m] ** 2 / mass[m] for m in mass if mass[m] > 0)


def independence_terms(table: JointTable) -> dict:
    """Conditional MIs that vanish for product inputs:
    ``I(X_j; M(i+1, j-1) | M_<=i, M(<=i, j-1))`` with ``M_<=i`` the end
    states of passes ``1..i``."""
    n, k = _nk(table)
    out = {}
    for i in range(1, k):
        ends = {mcol(a, n) for a in range(1, i + 1)}
        for j in range(1, n + 1):
            target = mcol(i + 1, j - 1)
            cond = (ends | {mcol(a, j - 1) for a in range(1, i + 1)}) - {target}
            out[f"{i},{j}"] = conditional_mi(table, [xcol(j)], [target], cond)
    return out
