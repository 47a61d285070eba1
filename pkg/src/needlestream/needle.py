"""Needle detectors.

Both detectors cut the stream into groups and, at the start of every group,
open a batch of counters ``(c1, c2, c3)``: a hash bucket ``c1``, a lifespan
``c2`` (groups survived) and an occurrence count ``c3``.  A counter born in
group ``b`` only listens to items in a random subset ``h1(b)`` of the domain
whose bucket ``h2(x)`` equals ``c1``, and is bumped at most once per group.
After each group a counter must keep ``c3 >= ratio * c2`` unless it is still
inside its grace period.  Under the uniform distribution buckets are hit
rarely and counters die; a needle keeps hitting its bucket, so its counter
lives on.

``m1_run``
    For ``p >= 1/sqrt(n)``, clocked stream, ``sqrt(n)`` groups of
    ``sqrt(n)`` items.  A counter that reaches the tracking lifespan is
    followed alone for a fixed number of rounds; outputs 1 if it holds up.
``m2_run``
    For small ``p``: the domain is split into blocks, each with its own
    independent counters; group sizes are Poisson; output 1 once any counter
    reaches the output lifespan.  May abort when the groups run past the end
    of the stream or the counters outgrow the memory cap.
``collision_baseline``
    Flags a repeated value inside a sliding window.

Hash functions are keyed PRFs of ``(seed, birth group, item)``; h1 is a
Bernoulli membership test with the subset's density as its rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import poisson
from sklearn.base import BaseEstimator, ClassifierMixin

from .rng import chunk_generator, prf, prf_extend, stream_key, to_unit
from .streams import LabeledStream, NeedleParams, StreamCursor

ABORT = -1


def _bits(v) -> np.ndarray:
    """Binary length of non-negative integers (at least 1)."""
    v = np.asarray(v, dtype=np.int64)
    return np.maximum(1, np.floor(np.log2(np.maximum(v, 1))).astype(np.int64) + 1)


def _ibits(v: int) -> int:
    return max(1, int(v).bit_length())


@dataclass
class DetectorResult:
    output: int
    peak_bits: int = 0
    peak_counters: int = 0
    groups: int = 0
    consumed: int = 0
    reason: str = ""
    lifetimes: np.ndarray | None = field(default=None, repr=False)

    @property
    def abort(self) -> bool:
        return self.output == ABORT


def _cursor(stream) -> StreamCursor:
    if isinstance(stream, StreamCursor):
        return stream
    return StreamCursor(stream)


# --- M1 ---------------------------------------------------------------------------


@dataclass(frozen=True)
class M1Config:
    C1: float = 6.0
    ratio: float = 1 / 3
    grace: int = 100
    track_threshold: int | None = None   # default ceil(10 log log n')
    track_rounds: int | None = None      # default ceil(10 log n')

    @property
    def C2(self) -> int:
        return int(round(100 * self.C1))

    def thresholds(self, n_eff: int) -> tuple[int, int]:
        L = math.log2(max(n_eff, 4))
        thr = self.track_threshold if self.track_threshold is not None else math.ceil(10 * math.log2(L))
        rounds = self.track_rounds if self.track_rounds is not None else math.ceil(10 * L)
        return thr, rounds


def m1_effective_length(params: NeedleParams) -> int:
    """Items actually read: all of them at ``p = 1/sqrt(n)``, the first
    ``1/p^2`` when ``p`` is larger."""
    if params.p <= 0 or params.p * params.p * params.n < 1 - 1e-9:
        raise ValueError(f"M1 needs p >= 1/sqrt(n); got p={params.p}, n={params.n}")
    return min(params.n, int(math.floor(1 / params.p ** 2 + 1e-9)))


def m1_run(stream, params: NeedleParams, cfg: M1Config = M1Config(), seed: int = 0,
           tracking: bool = True, max_groups: int | None = None) -> DetectorResult:
    """Run M1 on a clocked stream.

    With ``tracking=False`` no counter is ever promoted; the run instead
    records every counter's lifetime (``DetectorResult.lifetimes``, negative
    for counters still alive at the end) for survival estimates.
    """
    if params.n == 0:
        return DetectorResult(0, reason="empty stream")
    n_eff = m1_effective_length(params)
    g = math.isqrt(n_eff)
    G = n_eff // g
    if max_groups is not None:
        G = min(G, max_groups)
    C2 = cfg.C2
    rate = cfg.C1 / math.sqrt(n_eff)
    thr, rounds = cfg.thresholds(n_eff)
    if tracking and G < thr:
        return DetectorResult(0, reason="too few groups to ever track")
    k1 = stream_key(seed, "m1-h1")
    k2 = stream_key(seed, "m1-h2")
    c1_bits = _ibits(C2 - 1)
    cur = _cursor(stream)

    births = np.zeros(0, dtype=np.int64)
    heads = np.zeros(0, dtype=np.uint64)     # prf prefix per birth
    c3 = np.zeros((0, C2), dtype=np.int32)
    alive = np.zeros((0, C2), dtype=bool)
    dead_life: list = []
    tracked = None                           # (birth, c1, c3, head)
    streak = 0
    peak_bits = peak_counters = 0

    for i in range(1, G + 1):
        X = cur.take(g).astype(np.uint64)
        if len(X) < g:
            break
        h2x = (prf(k2, X) % np.uint64(C2)).astype(np.int64)
        if tracked is not None:
            b, c1, hits, head = tracked
            hit = bool(np.any((to_unit(prf_extend(head, X)) < rate) & (h2x == c1)))
            hits += hit
            c2 = i - b
            width = c1_bits + _ibits(c2) + _ibits(hits) + 1
            peak_bits, peak_counters = max(peak_bits, width), max(peak_counters, 1)
            if hits >= cfg.ratio * c2:
                streak += 1
                tracked = (b, c1, hits, head)
                if streak >= rounds:
                    return DetectorResult(1, peak_bits, peak_counters, i, i * g, "tracked counter held")
            else:
                tracked, streak = None, 0
            continue

        births = np.append(births, i)
        heads = np.append(heads, prf(k1, np.int64(i)))
        c3 = np.vstack([c3, np.zeros((1, C2), dtype=np.int32)])
        alive = np.vstack([alive, np.ones((1, C2), dtype=bool)])

        member = to_unit(prf_extend(heads[:, None], X[None, :])) < rate
        rows, cols = np.nonzero(member)
        if len(rows):
            upd = np.zeros_like(alive)
            upd[rows, h2x[cols]] = True
            c3 += upd & alive

        c2 = (i - births)[:, None]
        live = int(alive.sum())
        if live:
            widths = c1_bits + _bits(c2) + _bits(c3) + 1
            peak_bits = max(peak_bits, int((widths * alive).sum()))
            peak_counters = max(peak_counters, live)

        keep = alive & ((c3 >= cfg.ratio * c2) | (c2 <= cfg.grace))
        if not tracking:
            lost = alive & ~keep
            if lost.any():
                dead_life.append(np.broadcast_to(c2, alive.shape)[lost].ravel())
        alive = keep
        life = c2 + 1                             # lifespan after this group

        if tracking:
            ripe = (life[:, 0] >= thr)
            if ripe.any():
                ok = alive[ripe] & (c3[ripe] >= cfg.ratio * life[ripe])
                if ok.any():
                    score = np.where(ok, c3[ripe], -1)
                    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
                    rb = np.nonzero(ripe)[0][r]
                    tracked = (int(births[rb]), int(c), int(c3[rb, c]), heads[rb])
                    streak = 0
                    births = np.zeros(0, dtype=np.int64)
                    heads = np.zeros(0, dtype=np.uint64)
                    c3 = np.zeros((0, C2), dtype=np.int32)
                    alive = np.zeros((0, C2), dtype=bool)
                    continue
                alive[ripe] = False
        rowlive = alive.any(axis=1)
        if not rowlive.all():
            births, heads, c3, alive = births[rowlive], heads[rowlive], c3[rowlive], alive[rowlive]

    lifetimes = None
    if not tracking:
        censored = -np.broadcast_to((G - births + 1)[:, None], alive.shape)[alive].ravel()
        lifetimes = np.concatenate(dead_life + [censored])
    return DetectorResult(0, peak_bits, peak_counters, G, G * g, "no counter held", lifetimes)


def survival_from_lifetimes(lifetimes, rounds) -> dict:
    """Empirical ``Pr[lifetime >= r]`` for each ``r``.

    ``lifetimes`` holds completed lifetimes (>= 0) and censored ones
    (negated, still alive when observation stopped); a censored counter only
    counts towards ``r`` when it was observed for at least ``r`` rounds.
    """
    life = np.asarray(lifetimes)
    done, cens = life[life >= 0], -life[life < 0]
    out = {}
    for r in rounds:
        if r == 0:
            out[0] = (1.0, len(life))
            continue
        n_obs = int((done >= 0).sum() + (cens >= r).sum())
        surv = int((done >= r).sum() + (cens >= r).sum())
        out[r] = (surv / n_obs if n_obs else float("nan"), n_obs)
    return out


def survival_curve(detector: str, params: NeedleParams, rounds, trials: int = 1, seed: int = 0,
                   cfg=None, groups: int | None = None, dist: str = "uniform") -> dict:
    """Per-``r`` survival probability of a counter under ``dist``.

    Returns ``{r: (probability, number of counters observed)}``.  For M1 the
    run has promotion switched off so lifetimes are not truncated by the
    tracking phase; for the M2 sub-detectors every counter (explicit or
    implicit) is accounted for.
    """
    from .streams import gen_needle, gen_uniform

    rounds = list(rounds)
    gen = gen_uniform if dist == "uniform" else gen_needle
    if detector == "M1":
        cfg = cfg or M1Config()
        all_life = []
        for tr in range(trials):
            s = gen(params, seed + tr)
            res = m1_run(s, params, cfg, seed=seed + tr, tracking=False, max_groups=groups)
            all_life.append(res.lifetimes)
        return survival_from_lifetimes(np.concatenate(all_life), rounds)
    if detector == "M2":
        cfg = cfg or M2Config()
        alive_at = {r: 0 for r in rounds}
        total = {r: 0 for r in rounds}
        for tr in range(trials):
            s = gen(params, seed + tr)
            res = m2_run(s, params, replace(cfg, kout=float("inf"), mem_cap_bits=float("inf")), seed=seed + tr,
                         record_survival=True)
            for r in rounds:
                a, t = res.lifetimes.get(r, (0, 0))
                alive_at[r] += a
                total[r] += t
        return {r: ((alive_at[r] / total[r]) if total[r] else float("nan"), total[r]) for r in rounds}
    raise ValueError(f"unknown detector {detector!r}")


# --- M2 ---------------------------------------------------------------------------


@dataclass(frozen=True)
class M2Config:
    C1: float = 6.0
    ratio: float = 0.01
    grace: int = 10000
    kout: float = 3e6             # output once a lifespan reaches kout * log2(n)
    group_scale: float = 1.0      # group sizes ~ Poisson(group_scale / (4p))
    cap_factor: float = 4.0       # memory cap = cap_factor * blocks * counter width
    mem_cap_bits: float | None = None

    @property
    def C2(self) -> int:
        return int(round(1000 * self.C1))


@dataclass(frozen=True)
class M2Layout:
    blocks: int
    block_width: int
    groups: int
    rate: float
    mean_group: float
    out_lifespan: float
    counter_width: int
    index_bits: int
    cap_bits: float


def m2_layout(params: NeedleParams, cfg: M2Config) -> M2Layout:
    t, n, p = params.t, params.n, params.p
    if p <= 0:
        raise ValueError("M2 needs p > 0")
    L = max(1, math.ceil(1 / (p * p * n) - 1e-9))
    L = min(L, t)
    w = math.ceil(t / L)
    G = max(1, math.ceil(p * n - 1e-9))
    rate = min(1.0, cfg.C1 / (p * n))
    out_life = cfg.kout * math.log2(max(n, 2))
    kmax = int(min(G, out_life)) + 1
    width = _ibits(cfg.C2 - 1) + 2 * _ibits(kmax) + 1
    idx = _ibits(G)
    cap = cfg.mem_cap_bits if cfg.mem_cap_bits is not None else cfg.cap_factor * L * width
    return M2Layout(L, w, G, rate, cfg.group_scale / (4 * p), out_life, width, idx, cap)


def m2_caveat(params: NeedleParams) -> bool:
    """True when ``p`` lies outside the range the detector is designed for."""
    n = max(params.n, 2)
    return params.p > 1 / math.sqrt(n * math.log2(n) ** 3)


def m2_run(stream, params: NeedleParams, cfg: M2Config = M2Config(), seed: int = 0,
           record_survival: bool = False) -> DetectorResult:
    """Run M2; output 0, 1 or ``ABORT``.

    Counters that have never been hit are identical across a birth group, so
    only the window of births still inside the grace period is stored for
    them; counters with ``c3 >= 1`` are stored explicitly and metered at a
    fixed width.
    """
    lay = m2_layout(params, cfg)
    n, C2 = params.n, cfg.C2
    k1 = stream_key(seed, "m2-h1")
    k2 = stream_key(seed, "m2-h2")
    sizes = chunk_generator(seed, "m2-groups")
    cur = _cursor(stream)
    # explicit counters, keyed birth * (L * C2) + block * C2 + c1
    span = np.int64(lay.blocks) * np.int64(C2)
    keys = np.zeros(0, dtype=np.int64)
    hits = np.zeros(0, dtype=np.int64)
    peak_bits = lay.index_bits
    peak_counters = 0
    consumed = 0
    surv_alive: dict = {}
    surv_total: dict = {}
    heads = {}

    for i in range(1, lay.groups + 1):
        Ni = int(poisson.ppf(sizes.random(), lay.mean_group)) if lay.mean_group > 0 else 0
        if consumed + Ni > n:
            return DetectorResult(ABORT, peak_bits, peak_counters, i - 1, consumed, "stream exhausted")
        X = cur.take(Ni)
        consumed += Ni
        xb = X.astype(np.uint64)
        block = ((X - 1) // lay.block_width).astype(np.int64)
        bucket = (prf(k2, xb) % np.uint64(C2)).astype(np.int64)
        lo = max(1, i - 1 - cfg.grace)           # implicit births still alive
        live_births = set(range(lo, i + 1)) | set((keys // span).tolist())
        new_keys = []
        for b in sorted(live_births):
            if b not in heads:
                heads[b] = prf(k1, np.int64(b))
            sel = to_unit(prf_extend(heads[b], xb)) < lay.rate
            if not sel.any():
                continue
            kb = np.int64(b) * span + block[sel] * C2 + bucket[sel]
            kb = np.unique(kb)
            if b < lo:                            # only stored counters survive past grace
                kb = kb[np.isin(kb, keys, assume_unique=True)]
            new_keys.append(kb)
        if new_keys:
            touched = np.unique(np.concatenate(new_keys))
            pos = np.searchsorted(keys, touched)
            present = (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == touched) if len(keys) else np.zeros(len(touched), bool)
            hits[pos[present]] += 1
            fresh = touched[~present]
            if len(fresh):
                keys = np.concatenate([keys, fresh])
                hits = np.concatenate([hits, np.ones(len(fresh), dtype=np.int64)])
                order = np.argsort(keys, kind="stable")
                keys, hits = keys[order], hits[order]

        bits = len(keys) * lay.counter_width + lay.index_bits
        peak_bits = max(peak_bits, bits)
        peak_counters = max(peak_counters, len(keys))
        if bits > lay.cap_bits:
            return DetectorResult(ABORT, peak_bits, peak_counters, i, consumed, "memory cap exceeded")

        birth = keys // span
        c2 = i - birth
        keep = (hits >= cfg.ratio * c2) | (c2 <= cfg.grace)
        keys, hits, birth = keys[keep], hits[keep], birth[keep]
        if record_survival:
            for b in range(1, i + 1):
                r = i - b + 1
                if b >= i - cfg.grace:            # every counter of this birth is alive
                    a = lay.blocks * C2
                else:
                    a = int((birth == b).sum())
                surv_alive[r] = surv_alive.get(r, 0) + a
                surv_total[r] = surv_total.get(r, 0) + lay.blocks * C2
        implicit_oldest = max(1, i - cfg.grace)
        oldest = min([implicit_oldest] + birth.tolist())
        if i - oldest + 1 >= lay.out_lifespan:
            return DetectorResult(1, peak_bits, peak_counters, i, consumed, "lifespan reached output threshold")

    res = DetectorResult(0, peak_bits, peak_counters, lay.groups, consumed, "no counter reached output threshold")
    if record_survival:
        res.lifetimes = {r: (surv_alive[r], surv_total[r]) for r in surv_alive}
    return res


# --- collision baseline ----------------------------------------------------------


def collision_baseline(stream, w: int) -> DetectorResult:
    """1 iff two equal items sit fewer than ``w`` positions apart."""
    if w < 1:
        raise ValueError("window must be at least 1")
    if isinstance(stream, LabeledStream):
        blocks = stream.chunks()
    else:
        blocks = iter([np.asarray(stream, dtype=np.int64)])
    tail = np.zeros(0, dtype=np.int64)
    tail_pos = np.zeros(0, dtype=np.int64)
    start = 0
    t_max = 1
    for block in blocks:
        if len(block) == 0:
            continue
        t_max = max(t_max, int(np.abs(block).max()))
        vals = np.concatenate([tail, block])
        pos = np.concatenate([tail_pos, np.arange(start, start + len(block))])
        order = np.lexsort((pos, vals))
        sv, sp = vals[order], pos[order]
        same = sv[1:] == sv[:-1]
        if np.any(same & (sp[1:] - sp[:-1] < w)):
            return DetectorResult(1, (w - 1) * _ibits(t_max), w - 1, reason="collision in window")
        start += len(block)
        keep = max(0, min(w - 1, len(vals)))
        tail, tail_pos = vals[len(vals) - keep:], pos[len(pos) - keep:]
    return DetectorResult(0, (w - 1) * _ibits(t_max), w - 1, reason="no collision")


# --- estimator front-ends ----------------------------------------------------------


def _rows(X):
    if isinstance(X, LabeledStream):
        return [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], LabeledStream):
        return list(X)
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of streams (one per row)")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("stream items must be integers")
    return list(arr)


class _DetectorBase(ClassifierMixin, BaseEstimator):
    """Predicts 1 (needle), 0 (uniform) or -1 (abort) for each stream."""

    def fit(self, X=None, y=None):
        self.classes_ = np.array([0, 1])
        return self

    def _params(self, row):
        n = len(row)
        return NeedleParams(int(self.t), n, float(self.p))

    def predict(self, X):
        rows = _rows(X)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.results_ = [self._run(r, self._params(r), stream_key(seed, "row", k)) for k, r in enumerate(rows)]
        return np.array([res.output for res in self.results_])


class NeedleDetectorM1(_DetectorBase):
    def __init__(self, t=10 ** 9, p=1e-3, C1=6.0, track_threshold=None, track_rounds=None, random_state=0):
        self.t = t
        self.p = p
        self.C1 = C1
        self.track_threshold = track_threshold
        self.track_rounds = track_rounds
        self.random_state = random_state

    def _run(self, row, params, seed):
        cfg = M1Config(C1=self.C1, track_threshold=self.track_threshold, track_rounds=self.track_rounds)
        return m1_run(row, params, cfg, seed)


class NeedleDetectorM2(_DetectorBase):
    def __init__(self, t=10 ** 9, p=1e-5, C1=6.0, ratio=0.01, grace=10000, kout=3e6, group_scale=1.0,
                 mem_cap_bits=None, random_state=0):
        self.t = t
        self.p = p
        self.C1 = C1
        self.ratio = ratio
        self.grace = grace
        self.kout = kout
        self.group_scale = group_scale
        self.mem_cap_bits = mem_cap_bits
        self.random_state = random_state

    def _run(self, row, params, seed):
        cfg = M2Config(self.C1, self.ratio, self.grace, self.kout, self.group_scale, mem_cap_bits=self.mem_cap_bits)
        return m2_run(row, params, cfg, seed)


class CollisionDetector(_DetectorBase):
    def __init__(self, window=1000, random_state=None):
        self.window = window
        self.random_state = random_state

    def _params(self, row):
        return None

    def _run(self, row, params, seed):
        return collision_baseline(row, self.window)
