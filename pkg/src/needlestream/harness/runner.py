"""Monte Carlo trial execution and order-independent aggregation."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..needle import M1Config, M2Config, collision_baseline, m1_run, m2_layout, m2_run
from ..rng import derive_seed
from ..streams import NeedleParams, gen_local_needle, gen_needle, gen_uniform
from .config import ExperimentConfig
from .report import wilson_interval

CSV_HEADER = ("trial_id", "dist", "algo", "profile", "t", "n", "p", "output", "truth",
              "peak_mem_bits", "runtime_ms", "abort")


@dataclass
class TrialRecord:
    trial_id: int
    dist: str
    algo: str
    profile: str
    t: int
    n: int
    p: float
    output: float
    truth: int
    peak_mem_bits: int
    runtime_ms: float | None = None
    abort: bool = False

    def row(self) -> list:
        out = int(self.output) if float(self.output).is_integer() else repr(float(self.output))
        rt = "" if self.runtime_ms is None else f"{self.runtime_ms:.3f}"
        return [self.trial_id, self.dist, self.algo, self.profile, self.t, self.n, repr(float(self.p)),
                out, self.truth, self.peak_mem_bits, rt, int(self.abort)]

    @classmethod
    def from_row(cls, row: dict) -> "TrialRecord":
        out = float(row["output"])
        return cls(int(row["trial_id"]), row["dist"], row["algo"], row["profile"], int(row["t"]), int(row["n"]),
                   float(row["p"]), int(out) if out.is_integer() else out, int(row["truth"]),
                   int(row["peak_mem_bits"]), float(row["runtime_ms"]) if row["runtime_ms"] else None,
                   row["abort"] == "1")


def records_to_csv(records, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(records, key=lambda r: r.trial_id):
        w.writerow(r.row())
    text = buf.getvalue()
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_records(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {reader.fieldnames}")
        return [TrialRecord.from_row(r) for r in reader]


# --- trials ------------------------------------------------------------------------


def _stream(cfg: ExperimentConfig, params: NeedleParams, dist: str, seed: int):
    if dist == "D0":
        return gen_uniform(params, seed)
    if dist == "D1":
        return gen_needle(params, seed)
    return gen_local_needle(params, cfg.S, seed)


def _detect(cfg: ExperimentConfig, params: NeedleParams, stream, seed: int):
    consts = cfg.detector_constants()
    if cfg.algo == "m1":
        return m1_run(stream, params, M1Config(**consts), seed)
    if cfg.algo == "m2":
        return m2_run(stream, params, M2Config(**consts), seed)
    return collision_baseline(stream, cfg.window)


def run_trial(cfg: ExperimentConfig, trial_id: int, dist: str, index: int) -> TrialRecord:
    """One trial; its streams and hashes depend only on (master seed, dist, index)."""
    params = NeedleParams(cfg.t, cfg.n, cfg.p_value)
    stream = _stream(cfg, params, dist, derive_seed(cfg.master_seed, "stream", dist, index))
    start = time.perf_counter()
    res = _detect(cfg, params, stream, derive_seed(cfg.master_seed, "algo", dist, index))
    elapsed = (time.perf_counter() - start) * 1000 if cfg.timing else None
    return TrialRecord(trial_id, dist, cfg.algo, cfg.profile or "", cfg.t, cfg.n, params.p, res.output,
                       stream.label.truth, int(res.peak_bits), elapsed, res.abort)


def _run_chunk(args):
    cfg_dict, jobs = args
    cfg = ExperimentConfig(**cfg_dict)
    return [run_trial(cfg, *job) for job in jobs]


def trial_plan(cfg: ExperimentConfig) -> list[tuple[int, str, int]]:
    """(trial_id, dist, index) for every trial, arms laid out one after another."""
    plan = []
    for a, dist in enumerate(cfg.dists):
        plan += [(a * cfg.trials + i, dist, i) for i in range(cfg.trials)]
    return plan


def run_trials(cfg: ExperimentConfig) -> list[TrialRecord]:
    plan = trial_plan(cfg)
    if cfg.workers == 1 or len(plan) < 2:
        records = [run_trial(cfg, *job) for job in plan]
    else:
        base = {k: v for k, v in asdict(cfg).items()}
        chunks = [plan[w::cfg.workers] for w in range(cfg.workers)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = [r for part in pool.map(_run_chunk, [(base, c) for c in chunks]) for r in part]
    return sorted(records, key=lambda r: r.trial_id)


# --- aggregation -------------------------------------------------------------------


@dataclass
class ArmSummary:
    dist: str
    trials: int
    errors: int
    positives: int
    aborts: int
    error_rate: float | None
    interval: tuple | None


@dataclass
class SummaryReport:
    arms: dict
    err: float | None
    err_interval: tuple | None
    abort_rate: float | None
    memory: dict
    mem_within_cap: float | None
    asserts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.asserts.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(type(x))


def summarize(records, cfg: ExperimentConfig | None = None, mem_cap_bits: float | None = None) -> SummaryReport:
    """Per-arm error rates with Wilson intervals, Err, abort rate and memory percentiles.

    An abort is an error on whichever arm it occurs.  Err is the sum of the
    D0 false-positive rate and the needle-arm miss rate.
    """
    records = sorted(records, key=lambda r: r.trial_id)
    arms = {}
    for dist in sorted({r.dist for r in records}):
        rs = [r for r in records if r.dist == dist]
        errs = sum(1 for r in rs if r.abort or r.output != r.truth)
        pos = sum(1 for r in rs if r.output == 1)
        ab = sum(1 for r in rs if r.abort)
        arms[dist] = ArmSummary(dist, len(rs), errs, pos, ab, errs / len(rs), wilson_interval(errs, len(rs)))
    null_arm = arms.get("D0")
    needle_arm = arms.get("D1") or arms.get("DS")
    err = interval = None
    if null_arm and needle_arm:
        err = null_arm.error_rate + needle_arm.error_rate
        interval = (null_arm.interval[0] + needle_arm.interval[0], min(2.0, null_arm.interval[1] + needle_arm.interval[1]))
    mem = np.array([r.peak_mem_bits for r in records], dtype=float)
    memory = {}
    if len(mem):
        memory = {f"p{q}": float(np.percentile(mem, q)) for q in (50, 90, 99)}
        memory["max"] = float(mem.max())
    if mem_cap_bits is None and cfg is not None and cfg.algo == "m2":
        mem_cap_bits = m2_layout(NeedleParams(cfg.t, cfg.n, cfg.p_value), M2Config(**cfg.detector_constants())).cap_bits
    within = float(np.mean(mem <= mem_cap_bits)) if (len(mem) and mem_cap_bits is not None) else None
    if mem_cap_bits is not None:
        memory["cap_bits"] = float(mem_cap_bits)
    abort_rate = float(np.mean([r.abort for r in records])) if records else None
    rep = SummaryReport({k: asdict(v) for k, v in arms.items()}, err, interval, abort_rate, memory, within,
                        config=cfg.to_dict() if cfg is not None else {})
    if cfg is not None:
        rep.asserts = check_asserts(rep, cfg.asserts)
    return rep


_ASSERTS = {
    "err_max": (lambda r: r.err, lambda v, b: v <= b),
    "abort_rate_max": (lambda r: r.abort_rate, lambda v, b: v <= b),
    "mem_within_cap_min": (lambda r: r.mem_within_cap, lambda v, b: v >= b),
    "d0_positives_max": (lambda r: r.arms.get("D0", {}).get("positives"), lambda v, b: v <= b),
}


def check_asserts(rep: SummaryReport, asserts: dict) -> dict:
    out = {}
    for name, bound in asserts.items():
        if name not in _ASSERTS:
            raise ValueError(f"unknown assertion {name!r}; expected one of {sorted(_ASSERTS)}")
        get, ok = _ASSERTS[name]
        v = get(rep)
        out[name] = {"value": v, "bound": bound, "pass": v is not None and bool(ok(v, bound))}
    return out


def run_experiment(cfg: ExperimentConfig) -> tuple[SummaryReport, str]:
    """Run every trial in ``cfg`` and return the summary and the records CSV.

    Writes ``outputs.csv`` / ``outputs.report`` when those paths are set.
    """
    cfg.validate()
    records = run_trials(cfg)
    rep = summarize(records, cfg)
    text = records_to_csv(records, cfg.outputs.get("csv"))
    if cfg.outputs.get("report"):
        with open(cfg.outputs["report"], "w") as fh:
            fh.write(rep.to_json() + "\n")
    return rep, text

