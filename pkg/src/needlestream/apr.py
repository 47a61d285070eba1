"""Low-entropy approximate sum of a {-1, 0, 1} stream.

Three counters: ``delta`` sums a Bernoulli(p) sample of the items, ``zeta``
counts the sampled non-zeros, and once ``zeta`` reaches
``20 * log2(n) * p * B`` both freeze and ``gamma`` sums the remaining items
exactly.  The estimate is ``delta / p + gamma`` clipped to ``[-n, n]``.

The scalar functions (:func:`apr_init`, :func:`apr_step`,
:func:`apr_output`) mirror the algorithm step by step; :func:`apr_batch`
runs many independent copies at once with numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .kpass import KPassAlgorithm, state_bits
from .rng import chunk_generator


@dataclass(frozen=True)
class AprConfig:
    n: int
    gamma: float
    B: float
    constant: float = 6000.0

    def __post_init__(self):
        if self.constant <= 0:
            raise ValueError("sampling constant must be positive")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.gamma > 4 / math.sqrt(self.n):
            raise ValueError(f"need gamma > 4/sqrt(n) = {4 / math.sqrt(self.n):.4g}, got {self.gamma}")
        if not self.B > self.gamma * math.sqrt(self.n):
            raise ValueError(f"need B > gamma*sqrt(n) = {self.gamma * math.sqrt(self.n):.4g}, got {self.B}")

    @property
    def p_sample(self) -> float:
        L = math.log2(self.n)
        return min(self.constant * L * L * self.B / (self.gamma ** 2 * self.n), 1.0)

    @property
    def threshold(self) -> float:
        return 20 * math.log2(self.n) * self.p_sample * self.B

    @property
    def tolerance(self) -> float:
        """Target additive error ``(gamma / 2) * sqrt(n)``."""
        return self.gamma / 2 * math.sqrt(self.n)

    def entropy_bound(self) -> float:
        L = math.log2(self.n)
        return 40 + 6 * math.log2(L) + 2 * math.log2(self.B / (self.gamma * math.sqrt(self.n)))


@dataclass(frozen=True)
class AprState:
    p_sample: float
    threshold: float
    n: int
    delta: int = 0
    zeta: int = 0
    gamma: int = 0
    j: int = 0

    @property
    def frozen(self) -> bool:
        return self.zeta >= self.threshold

    def to_json(self) -> str:
        return json.dumps({"delta": self.delta, "zeta": self.zeta, "gamma": self.gamma,
                           "p_sample": self.p_sample, "j": self.j}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, cfg: AprConfig) -> "AprState":
        d = json.loads(text)
        return cls(d["p_sample"], cfg.threshold, cfg.n, d["delta"], d["zeta"], d["gamma"], d["j"])


def apr_init(cfg: AprConfig) -> AprState:
    return AprState(cfg.p_sample, cfg.threshold, cfg.n)


def apr_step(state: AprState, a: int, r: int) -> AprState:
    """One item.  ``r`` is the step's Bernoulli(p_sample) draw; it is
    ignored once the sampled counters have frozen."""
    if state.j >= state.n:
        raise ValueError("all n items already consumed")
    if a not in (-1, 0, 1):
        raise ValueError(f"items must lie in {{-1, 0, 1}}, got {a!r}")
    if state.zeta < state.threshold:
        if r:
            return replace(state, delta=state.delta + a, zeta=state.zeta + (a != 0), j=state.j + 1)
        return replace(state, j=state.j + 1)
    return replace(state, gamma=state.gamma + a, j=state.j + 1)


def apr_output(state: AprState) -> float:
    est = state.delta / state.p_sample + state.gamma
    return float(max(min(est, state.n), -state.n))


def apr_run(cfg: AprConfig, a, r) -> AprState:
    st = apr_init(cfg)
    for aj, rj in zip(a, r):
        st = apr_step(st, int(aj), int(rj))
    return st


# --- vectorised copies ----------------------------------------------------------


@dataclass
class AprBatch:
    """Final counters of many independent runs plus optional snapshots."""

    delta: np.ndarray
    zeta: np.ndarray
    gamma: np.ndarray
    truth: np.ndarray
    cfg: AprConfig
    snapshots: dict

    @property
    def output(self) -> np.ndarray:
        est = self.delta / self.cfg.p_sample + self.gamma
        return np.clip(est, -self.cfg.n, self.cfg.n)

    @property
    def error(self) -> np.ndarray:
        return self.output - self.truth


def apr_batch(cfg: AprConfig, columns, trials: int, seed: int = 0, snapshot_at=()) -> AprBatch:
    """Run ``trials`` copies of the algorithm.

    ``columns(j)`` returns the ``trials`` items for step ``j`` (1-based).
    The sampling coins come from a counter-based generator keyed by
    ``seed``; the same seed replays bit-for-bit.
    """
    p, thr = cfg.p_sample, cfg.threshold
    delta = np.zeros(trials, dtype=np.int64)
    zeta = np.zeros(trials, dtype=np.int64)
    gamma = np.zeros(trials, dtype=np.int64)
    truth = np.zeros(trials, dtype=np.int64)
    rng = chunk_generator(seed, "apr-coins")
    snaps = {}
    want = set(int(s) for s in snapshot_at)
    if 0 in want:
        snaps[0] = (delta.copy(), zeta.copy(), gamma.copy())
    for j in range(1, cfg.n + 1):
        a = np.asarray(columns(j), dtype=np.int64)
        active = zeta < thr
        r = rng.random(trials) < p if p < 1.0 else np.ones(trials, dtype=bool)
        take = active & r
        delta += np.where(take, a, 0)
        zeta += take & (a != 0)
        gamma += np.where(active, 0, a)
        truth += a
        if j in want:
            snaps[j] = (delta.copy(), zeta.copy(), gamma.copy())
    return AprBatch(delta, zeta, gamma, truth, cfg, snaps)


def adversarial_columns(n: int, nonzeros: int, trials: int, seed: int):
    """Column source where each trial holds exactly ``nonzeros`` random-sign
    non-zero items at uniformly random positions."""
    nonzeros = min(nonzeros, n)
    rng = chunk_generator(seed, "apr-adversarial")
    mask = np.zeros((trials, n), dtype=bool)
    if nonzeros == n:
        mask[:] = True
    elif nonzeros:
        # the positions holding the smallest uniform keys are the non-zeros
        keys = rng.random((trials, n), dtype=np.float32)
        idx = np.argpartition(keys, nonzeros - 1, axis=1)[:, :nonzeros]
        del keys
        mask[np.arange(trials)[:, None], idx] = True
    signs = np.where(rng.random((trials, n)) < 0.5, -1, 1).astype(np.int8)
    items = np.where(mask, signs, 0).astype(np.int8)
    return lambda j: items[:, j - 1]


def sparse_columns(n: int, density: float, trials: int, seed: int):
    """Each item independently non-zero with probability ``density``, random sign."""
    rng = chunk_generator(seed, "apr-sparse")

    def col(j):
        u = rng.random(trials)
        return np.where(u < density / 2, -1, np.where(u < density, 1, 0))

    return col


def plugin_entropy(samples, miller_madow: bool = True) -> float:
    """Entropy in bits of the empirical distribution of rows of ``samples``."""
    arr = np.asarray(samples)
    if arr.ndim == 1:
        arr = arr[:, None]
    _, counts = np.unique(arr, axis=0, return_counts=True)
    N = counts.sum()
    q = counts / N
    h = float(-(q * np.log2(q)).sum())
    if miller_madow:
        h += (len(counts) - 1) / (2 * N * math.log(2))
    return h


def state_entropy(batch: AprBatch, j: int, miller_madow: bool = True) -> float:
    d, z, g = batch.snapshots[j]
    return plugin_entropy(np.stack([d, z, g], axis=1), miller_madow)


def range_widths(cfg: AprConfig) -> int:
    """Bits needed for the counter ranges: |delta| and zeta up to the
    threshold (or n), |gamma| up to n."""
    top = min(math.floor(cfg.threshold) + 1, cfg.n)
    return state_bits(-top) + state_bits(top) + state_bits(-cfg.n)


def as_kpass(cfg: AprConfig) -> KPassAlgorithm:
    """The algorithm as a one-pass state machine over ``(delta, zeta, gamma)``."""
    p, thr = cfg.p_sample, cfg.threshold

    def step(i, j, a, m, r):
        d, z, g = m
        if z < thr:
            return (d + a, z + (a != 0), g) if r else m
        return (d, z, g + a)

    rand = ((1, 1.0),) if p >= 1.0 else ((0, 1.0 - p), (1, p))
    return KPassAlgorithm("apr", 1, range_widths(cfg), (0, 0, 0), step,
                          lambda m: max(min(m[0] / p + m[2], cfg.n), -cfg.n), randomness=rand,
                          meta={"n": cfg.n})


class ApproxSum(BaseEstimator):
    """Estimator front-end: each row of ``A`` is one stream.

    ``predict`` returns one sum estimate per row; rows use independent
    sampling coins derived from ``random_state``.
    """

    def __init__(self, gamma=0.5, B=64.0, random_state=0):
        self.gamma = gamma
        self.B = B
        self.random_state = random_state

    @staticmethod
    def _check(A):
        A = check_array(A, dtype=None)
        if not np.all(np.isin(A, (-1, 0, 1))):
            raise ValueError("items must lie in {-1, 0, 1}")
        return A.astype(np.int64)

    def fit(self, A=None, y=None):
        if A is not None:
            A = self._check(A)
            self.n_features_in_ = A.shape[1]
            self.config_ = AprConfig(A.shape[1], self.gamma, self.B)
        return self

    def predict(self, A):
        A = self._check(A)
        if hasattr(self, "n_features_in_") and A.shape[1] != self.n_features_in_:
            raise ValueError(f"fitted on streams of length {self.n_features_in_}, got {A.shape[1]}")
        cfg = AprConfig(A.shape[1], self.gamma, self.B)
        batch = apr_batch(cfg, lambda j: A[:, j - 1], A.shape[0], seed=int(self.random_state))
        return batch.output
