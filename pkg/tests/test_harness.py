import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from needlestream.harness.calibrate import calibrate_profile, expand_grid
from needlestream.harness.cli import main
from needlestream.harness.config import ConfigError, ExperimentConfig, load_config, load_profile, resolve_p
from needlestream.harness.report import plot_survival, report_plots, wilson_interval, write_survival_csv
from needlestream.harness.runner import (CSV_HEADER, TrialRecord, read_records, records_to_csv, run_experiment,
                                         summarize)

SMALL = dict(algo="m1", profile="paper", t=10 ** 9, n=4 * 10 ** 4, p=1 / 200, trials=3, master_seed=11,
             constants={"track_rounds": 10})


# --- config -------------------------------------------------------------------------


def test_profiles_exist_and_cover_both_detectors():
    for name in ("paper", "desk"):
        prof = load_profile(name)
        assert {"m1", "m2"} <= set(prof)
    with pytest.raises(ConfigError):
        load_profile("nope")


def test_p_rules():
    assert resolve_p("inv_sqrt_n", 10 ** 6) == pytest.approx(1e-3)
    assert resolve_p("m2_max", 2 ** 20) == pytest.approx(1 / math.sqrt(2 ** 20 * 20 ** 3))
    assert resolve_p(0.25, 5) == 0.25
    with pytest.raises(ConfigError):
        resolve_p("bogus", 10)


@pytest.mark.parametrize("bad", [dict(trials=-1), dict(algo="m9"), dict(profile="nope"), dict(dists=["D7"]),
                                 dict(dists=["DS"]), dict(algo="collision"), dict(workers=0)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**SMALL, **bad}).validate()


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"algo": "m1", "n": 1000, "constants": {"C1": 2.0}}))
    cfg = load_config(str(path), {"n": 2000, "constants.grace": 7, "trials": None})
    assert cfg.n == 2000 and cfg.trials == 100
    assert cfg.detector_constants()["C1"] == 2.0 and cfg.detector_constants()["grace"] == 7
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text(json.dumps({"colour": "blue"}))
    with pytest.raises(ConfigError):
        load_config(str(path))


# --- Wilson intervals ---------------------------------------------------------------


def _coverage(p, n, conf=0.95):
    """Exact coverage of the interval at true proportion p."""
    ks = np.arange(n + 1)
    hit = np.array([wilson_interval(int(k), n, conf)[0] <= p <= wilson_interval(int(k), n, conf)[1] for k in ks])
    return float(binom.pmf(ks, n, p)[hit].sum())


@pytest.mark.parametrize("n", [20, 100, 300])
@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_wilson_coverage_against_exact_binomial(p, n):
    assert _coverage(p, n) >= 0.92


@given(st.integers(1, 500), st.data())
def test_wilson_contains_point_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_empty():
    assert wilson_interval(0, 0) is None


# --- running and aggregation ---------------------------------------------------------


def test_zero_trials_gives_empty_csv_and_null_estimates():
    rep, text = run_experiment(ExperimentConfig(**{**SMALL, "trials": 0}))
    assert text == ",".join(CSV_HEADER) + "\n"
    assert rep.err is None and rep.arms == {} and rep.abort_rate is None


def test_same_config_gives_identical_csv(tmp_path):
    cfg = ExperimentConfig(**SMALL, outputs={"csv": str(tmp_path / "a.csv"), "report": str(tmp_path / "a.json")})
    _, a = run_experiment(cfg)
    _, b = run_experiment(ExperimentConfig(**SMALL))
    assert a == b
    assert (tmp_path / "a.csv").read_text() == a
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["config"]["effective_constants"]["C1"] == 6.0


def test_worker_pool_matches_serial():
    _, serial = run_experiment(ExperimentConfig(**SMALL))
    _, pooled = run_experiment(ExperimentConfig(**SMALL, workers=2))
    assert serial == pooled


def test_records_round_trip(tmp_path):
    rep, text = run_experiment(ExperimentConfig(**SMALL, timing=True))
    (tmp_path / "r.csv").write_text(text)
    recs = read_records(tmp_path / "r.csv")
    assert [r.trial_id for r in recs] == list(range(6))
    assert all(r.runtime_ms is not None for r in recs)
    assert summarize(recs).err == rep.err


def _rec(i, dist, out, truth, mem=10, abort=False):
    return TrialRecord(i, dist, "m2", "desk", 10, 5, 0.1, out, truth, mem, None, abort)


def test_aborts_count_as_errors_and_order_does_not_matter():
    recs = [_rec(0, "D0", 0, 0), _rec(1, "D0", -1, 0, abort=True), _rec(2, "D1", 1, 1), _rec(3, "D1", -1, 1, 100, True)]
    a = summarize(recs, mem_cap_bits=50)
    b = summarize(list(reversed(recs)), mem_cap_bits=50)
    assert a.to_json() == b.to_json()
    assert a.arms["D0"]["error_rate"] == 0.5 and a.arms["D1"]["error_rate"] == 0.5
    assert a.err == 1.0 and 0 <= a.err_interval[0] <= a.err <= a.err_interval[1] <= 2
    assert a.abort_rate == 0.5 and a.mem_within_cap == 0.75


def test_asserts_drive_pass_flag():
    cfg = ExperimentConfig(**SMALL, asserts={"err_max": 2.0, "abort_rate_max": 0.0, "d0_positives_max": 0})
    rep, _ = run_experiment(cfg)
    assert rep.passed
    cfg = ExperimentConfig(**SMALL, asserts={"err_max": -1})
    rep, _ = run_experiment(cfg)
    assert not rep.passed
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(**SMALL, asserts={"speed": 1}))


def test_csv_writes_real_outputs():
    rec = TrialRecord(0, "coin", "apr", "", 2, 4, 0.0, 2.5, 3, 12)
    line = records_to_csv([rec]).splitlines()[1]
    assert line == "0,coin,apr,,2,4,0.0,2.5,3,12,,0"


def test_local_needle_arm_and_collision_algo():
    cfg = ExperimentConfig(algo="collision", profile=None, t=10 ** 9, n=500, p=0.05, trials=4, window=500,
                           dists=["D0", "DS"], S=list(range(1, 501)))
    rep, _ = run_experiment(cfg)
    assert rep.arms["DS"]["error_rate"] == 0.0 and rep.arms["D0"]["error_rate"] == 0.0


# --- plots ----------------------------------------------------------------------------


def test_single_record_plots(tmp_path):
    records_to_csv([_rec(0, "D0", 0, 0)], tmp_path / "r.csv")
    write_survival_csv({0: (1.0, 10), 5: (0.2, 10)}, tmp_path / "s.csv")
    files = report_plots(tmp_path / "r.csv", tmp_path / "fig", tmp_path / "s.csv")
    assert len(files) == 3 and all(os.path.getsize(f) > 0 for f in files)


def test_survival_plot_has_reference_curve(tmp_path):
    write_survival_csv({r: (math.exp(-r / 4), 100) for r in range(0, 30, 5)}, tmp_path / "s.csv")
    svg = open(plot_survival(tmp_path / "s.csv", tmp_path / "s.svg")).read()
    assert "exp(-r/5)" in svg


def test_memory_plot_has_reference_curve(tmp_path):
    recs = [TrialRecord(i, "D0", "m2", "desk", 10 ** 9, 10 ** 4, p, 0, 0, int(5 / (p * p * 10 ** 4)))
            for i, p in enumerate([0.001, 0.002, 0.004])]
    records_to_csv(recs, tmp_path / "r.csv")
    files = report_plots(tmp_path / "r.csv", tmp_path / "fig")
    svg = open(files[1]).read()
    assert "/(p^2 n)" in svg


def test_plots_need_records(tmp_path):
    records_to_csv([], tmp_path / "r.csv")
    with pytest.raises(ValueError):
        report_plots(tmp_path / "r.csv", tmp_path / "fig")


# --- calibration ------------------------------------------------------------------------


M2_BASE = dict(algo="m2", profile=None, t=2 ** 40, n=2 ** 14, p="m2_max", master_seed=3)


def test_expand_grid():
    pts = expand_grid({"C1": [1, 2], "grace": [0], "points": [{"C1": 1, "grace": 0}, {"C1": 9}]})
    assert pts == [{"C1": 1, "grace": 0}, {"C1": 2, "grace": 0}, {"C1": 9}]
    with pytest.raises(ConfigError):
        expand_grid({})
    with pytest.raises(ConfigError):
        expand_grid({"C1": []})


def test_single_point_grid_is_pinned(tmp_path):
    base = ExperimentConfig(**M2_BASE).validate()
    point = {"C1": 1.0, "ratio": 0.6, "grace": 0, "kout": 0.15, "group_scale": 1.0}
    res = calibrate_profile(base, {"points": [point]}, screen_trials=4, confirm_trials=4,
                            out_path=tmp_path / "desk.json")
    assert res.pinned.constants == point
    saved = json.loads((tmp_path / "desk.json").read_text())
    assert saved["m2"]["constants"]["C1"] == 1.0
    assert saved["m2"]["calibration"]["feasible"] == res.feasible
    assert "m1" in saved


def test_calibration_never_worse_than_paper_point():
    base = ExperimentConfig(**M2_BASE).validate()
    paper = load_profile("paper")["m2"]["constants"]
    grid = {"C1": [0.5, 2.0], "ratio": [0.6], "grace": [0], "kout": [0.15], "group_scale": [1.0, 3.0],
            "points": [paper]}
    res = calibrate_profile(base, grid, screen_trials=4, confirm_trials=6, top=10)
    paper_pt = next(g for g in res.confirmed if g.constants == paper)
    # argmin over feasible points, or over everything when none is feasible
    assert res.pinned.err <= paper_pt.err or (res.feasible and not paper_pt.feasible)


# --- CLI ----------------------------------------------------------------------------------


def test_cli_gen_and_exact_checks(tmp_path, capsys):
    assert main(["gen", "--dist", "D1", "--t", "1000", "--n", "50", "--p", "0.1", "--out", str(tmp_path / "s.txt")]) == 0
    assert main(["gen", "--dist", "coin", "--n", "20", "--format", "binary", "--out", str(tmp_path / "c.bin")]) == 0
    assert main(["simulate-check"]) == 0
    assert main(["infocost-check", "--n-max", "3"]) == 0
    capsys.readouterr()


def test_cli_run_needle_exit_code_follows_asserts(tmp_path, capsys):
    cfg = {**SMALL, "asserts": {"d0_positives_max": 0}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run-needle", "--config", str(path), "--csv", str(tmp_path / "r.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["asserts"]["d0_positives_max"]["pass"]
    cfg["asserts"] = {"err_max": -1}
    path.write_text(json.dumps(cfg))
    assert main(["run-needle", "--config", str(path), "--c1", "3"]) == 1
    out = json.loads(capsys.readouterr().out)
    assert out["config"]["effective_constants"]["C1"] == 3.0
    assert main(["report", "--csv", str(tmp_path / "r.csv"), "--out", str(tmp_path / "fig")]) == 0
    capsys.readouterr()


def test_cli_apr_and_coin(capsys):
    assert main(["run-apr", "--n", "1024", "--B", "32", "--trials", "200"]) == 0
    assert main(["run-apr", "--mode", "entropy", "--n", "1024", "--B", "32", "--trials", "500"]) == 0
    assert main(["run-coin", "--n", "256", "--B", "256", "--trials", "20", "--min-within", "1.0"]) == 0
    capsys.readouterr()


def test_cli_reports_config_errors(tmp_path, capsys):
    assert main(["run-needle", "--config", str(tmp_path / "missing.json")]) == 2
    assert "error" in capsys.readouterr().err
