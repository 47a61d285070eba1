"""Confidence intervals and SVG figures.

Every figure is drawn from a CSV file alone, so it can be regenerated
without re-running any trial.
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict

import numpy as np
from scipy.stats import binomtest

SURVIVAL_HEADER = ("r", "survival", "n_obs")


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple | None:
    """Wilson score interval for ``k`` successes in ``n`` trials (``None`` if ``n == 0``)."""
    if n == 0:
        return None
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    p = k / n
    return (min(float(ci.low), p), max(float(ci.high), p))


def write_survival_csv(curve: dict, path) -> None:
    """``curve`` maps r -> (probability, counters observed)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVIVAL_HEADER)
        for r in sorted(curve):
            prob, n_obs = curve[r]
            w.writerow([r, repr(float(prob)), n_obs])


def _read(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 4))
    return plt, fig, ax


def _save(plt, fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(path)


def plot_survival(survival_csv, path) -> str:
    """Empirical counter survival with the exp(-r/5) reference curve."""
    rows = _read(survival_csv)
    r = np.array([float(x["r"]) for x in rows])
    s = np.array([float(x["survival"]) for x in rows])
    plt, fig, ax = _figure()
    ax.plot(r, s, "o-", ms=3, label="empirical")
    grid = np.linspace(0, max(r.max() if len(r) else 1, 1), 200)
    ax.plot(grid, np.exp(-grid / 5), "--", label="exp(-r/5)")
    positive = s[s > 0]
    if len(positive):
        ax.set_yscale("log")
        ax.set_ylim(bottom=max(min(positive.min(), math.exp(-grid.max() / 5)) / 2, 1e-300))
    ax.set_xlabel("rounds survived r")
    ax.set_ylabel("Pr[lifetime >= r]")
    ax.legend()
    return _save(plt, fig, path)


def _by_p(rows):
    groups = defaultdict(list)
    for row in rows:
        groups[float(row["p"])].append(row)
    return dict(sorted(groups.items()))


def plot_error_vs_p(records_csv, path) -> str:
    """Err (false-positive rate + miss rate, aborts as errors) against p."""
    plt, fig, ax = _figure()
    for algo, rows in sorted(_split(_read(records_csv), "algo").items()):
        ps, errs = [], []
        for p, rs in _by_p(rows).items():
            err = 0.0
            for dist in ("D0", "D1"):
                arm = [x for x in rs if x["dist"] == dist]
                if arm:
                    err += np.mean([x["abort"] == "1" or float(x["output"]) != float(x["truth"]) for x in arm])
            ps.append(p)
            errs.append(err)
        ax.plot(ps, errs, "o-", label=algo)
    ax.set_xscale("log")
    ax.set_ylim(0, 2)
    ax.set_xlabel("p")
    ax.set_ylabel("Err")
    ax.legend()
    return _save(plt, fig, path)


def plot_memory_vs_p(records_csv, path) -> str:
    """Median peak memory against p, with a c/(p^2 n) reference fitted through the data."""
    plt, fig, ax = _figure()
    ref_pts = []
    for algo, rows in sorted(_split(_read(records_csv), "algo").items()):
        ps, med = [], []
        for p, rs in _by_p(rows).items():
            ps.append(p)
            med.append(float(np.median([float(x["peak_mem_bits"]) for x in rs])))
            ref_pts.append((p, int(rs[0]["n"]), med[-1]))
        ax.plot(ps, med, "o-", label=f"{algo} median peak")
    ref_pts = [x for x in ref_pts if x[0] > 0 and x[2] > 0]
    if ref_pts:
        shape = np.array([1 / (p * p * n) for p, n, _ in ref_pts])
        c = float(np.exp(np.mean(np.log([m for *_, m in ref_pts]) - np.log(shape))))
        ps = np.array(sorted({p for p, *_ in ref_pts}))
        n = ref_pts[0][1]
        ax.plot(ps, c / (ps * ps * n), "--", label=f"{c:.3g}/(p^2 n)")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("p")
    ax.set_ylabel("peak memory (bits)")
    ax.legend()
    return _save(plt, fig, path)


def _split(rows, key):
    out = defaultdict(list)
    for row in rows:
        out[row[key]].append(row)
    return out


def report_plots(records_csv, out_dir, survival_csv=None) -> list[str]:
    """Write the figures for a records CSV (and optional survival CSV) into ``out_dir``."""
    rows = _read(records_csv)
    if not rows:
        raise ValueError("report_plots needs at least one record")
    os.makedirs(out_dir, exist_ok=True)
    files = [plot_error_vs_p(records_csv, os.path.join(out_dir, "error_vs_p.svg")),
             plot_memory_vs_p(records_csv, os.path.join(out_dir, "memory_vs_p.svg"))]
    if survival_csv:
        files.append(plot_survival(survival_csv, os.path.join(out_dir, "survival.svg")))
    return files
