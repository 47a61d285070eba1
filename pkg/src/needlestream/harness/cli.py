"""Command-line entry point: ``needlestream <subcommand> ...``.

Every subcommand prints a JSON report on stdout and exits 0 exactly when all
of its asserted bounds hold.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .config import ConfigError, load_config, resolve_p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# --- gen ----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    from ..streams import (NeedleParams, gen_coin, gen_local_needle, gen_needle, gen_strict_turnstile_counter,
                           gen_uniform, write_binary, write_text)

    if args.dist in ("D0", "D1", "DS"):
        params = NeedleParams(args.t, args.n, resolve_p(args.p, args.n) if args.p is not None else 0.0)
        if args.dist == "D0":
            s = gen_uniform(params, args.seed)
        elif args.dist == "D1":
            s = gen_needle(params, args.seed)
        else:
            s = gen_local_needle(params, args.S, args.seed)
        header = (params.t, params.n, params.p)
    elif args.dist == "coin":
        s, header = gen_coin(args.n, args.seed), (2, args.n, 0.0)
    else:
        s = gen_strict_turnstile_counter(args.n, args.C, args.seed)
        header = (2, len(s), 0.0)
    writer = write_binary if args.format == "binary" else write_text
    writer(s, args.out, header=header)
    _emit({"out": args.out, "label": s.label.kind, "truth": s.label.truth, "length": len(s)})
    return 0


# --- run-apr -----------------------------------------------------------------------


def cmd_run_apr(args) -> int:
    from ..apr import AprConfig, adversarial_columns, apr_batch, sparse_columns, state_entropy

    cfg = AprConfig(args.n, args.gamma, args.B, args.constant)
    out = {"n": cfg.n, "gamma": cfg.gamma, "B": cfg.B, "p_sample": cfg.p_sample, "threshold": cfg.threshold,
           "tolerance": cfg.tolerance, "trials": args.trials, "seed": args.seed}
    ok = True
    if args.mode == "accuracy":
        nz = args.nonzeros if args.nonzeros is not None else math.floor(80 * args.B * math.log2(args.n))
        batch = apr_batch(cfg, adversarial_columns(cfg.n, nz, args.trials, args.seed), args.trials, args.seed)
        fails = int((np.abs(batch.error) > cfg.tolerance).sum())
        ok = fails <= args.max_failures
        out.update(nonzeros=min(nz, cfg.n), failures=fails, max_failures=args.max_failures,
                   max_abs_error=float(np.abs(batch.error).max()))
    else:
        snaps = [cfg.n // 4, cfg.n // 2, cfg.n]
        density = args.density if args.density is not None else args.B / cfg.n
        batch = apr_batch(cfg, sparse_columns(cfg.n, density, args.trials, args.seed), args.trials, args.seed,
                          snapshot_at=snaps)
        bound = 1.2 * cfg.entropy_bound()
        ent = {str(j): state_entropy(batch, j) for j in snaps}
        ok = all(v <= bound for v in ent.values())
        out.update(density=density, entropy_bits=ent, bound_bits=bound)
    out["pass"] = bool(ok)
    _emit(out)
    return 0 if ok else 1


# --- run-needle --------------------------------------------------------------------


def cmd_run_needle(args) -> int:
    from ..needle import M1Config, survival_curve
    from ..streams import NeedleParams
    from .report import write_survival_csv
    from .runner import run_experiment

    overrides = {"algo": args.algo, "profile": args.profile, "t": args.t, "n": args.n, "p": args.p,
                 "trials": args.trials, "master_seed": args.seed, "workers": args.workers, "window": args.window,
                 "constants.C1": args.c1, "constants.kout": args.kout, "constants.grace": args.grace,
                 "constants.mem_cap_bits": args.mem_cap_bits}
    if args.timing:
        overrides["timing"] = True
    cfg = load_config(args.config, overrides)
    if args.csv:
        cfg.outputs["csv"] = args.csv
    if args.report:
        cfg.outputs["report"] = args.report
    rep, _ = run_experiment(cfg)
    result = json.loads(rep.to_json())
    if args.survival:
        params = NeedleParams(cfg.t, cfg.n, cfg.p_value)
        consts = {k: v for k, v in cfg.detector_constants().items() if k in M1Config.__dataclass_fields__}
        curve = survival_curve("M1", params, range(0, args.survival_max_r + 1), trials=args.survival_trials,
                               seed=cfg.master_seed, cfg=M1Config(**consts))
        write_survival_csv(curve, args.survival)
        result["survival_csv"] = args.survival
    _emit(result)
    return 0 if rep.passed else 1


# --- run-coin ----------------------------------------------------------------------


def cmd_run_coin(args) -> int:
    """Approximate sums of +/-1 coin streams; records the estimate against the true sum."""
    from ..apr import AprConfig, apr_batch
    from ..rng import chunk_generator
    from .runner import TrialRecord, records_to_csv

    cfg = AprConfig(args.n, args.gamma, args.B, args.constant)
    rng = chunk_generator(args.seed, "coin-items")
    items = np.where(rng.random((args.trials, args.n)) < 0.5, -1, 1).astype(np.int8)
    batch = apr_batch(cfg, lambda j: items[:, j - 1], args.trials, args.seed)
    recs = [TrialRecord(i, "coin", "apr", "", 2, args.n, 0.0, float(batch.output[i]), int(batch.truth[i]),
                        3 * max(1, int(cfg.n).bit_length() + 1)) for i in range(args.trials)]
    if args.csv:
        records_to_csv(recs, args.csv)
    err = np.abs(batch.error)
    nonzero = batch.truth != 0
    agree = float(np.mean(np.sign(batch.output[nonzero]) == np.sign(batch.truth[nonzero]))) if nonzero.any() else None
    within = float(np.mean(err <= cfg.tolerance)) if args.trials else None
    ok = args.min_within is None or (within is not None and within >= args.min_within)
    _emit({"n": args.n, "trials": args.trials, "within_tolerance": within, "tolerance": cfg.tolerance,
           "sign_agreement": agree, "mean_abs_error": float(err.mean()) if args.trials else None, "pass": ok})
    return 0 if ok else 1


# --- exact checks -------------------------------------------------------------------


def cmd_infocost_check(args) -> int:
    from ..infocost import build_joint, mic
    from ..kpass import ZOO

    rows, ok = [], True
    for name, make in ZOO.items():
        for n in range(args.n_min, args.n_max + 1):
            for k in (1, 2):
                for mu in (0.5, 0.3):
                    rep = mic(build_joint(make(n, k), mu=mu, n=n, k=k))
                    s1, s2 = rep.mic - rep.mic_cond, rep.bound_2ksn - rep.mic
                    good = min(s1, s2) >= -1e-9
                    ok &= good
                    rows.append({"alg": name, "n": n, "k": k, "mu": mu, "mic_cond": rep.mic_cond, "mic": rep.mic,
                                 "bound": rep.bound_2ksn, "ok": good})
    _emit({"cases": rows, "pass": bool(ok)})
    return 0 if ok else 1


def cmd_simulate_check(args) -> int:
    from ..kpass import parity_compare, with_frozen_pass
    from ..simulate import (algorithm_error, build_conditional_oracle, first_repeat, pair_check, protocol_error,
                            simulation_fidelity)

    fid = simulation_fidelity(build_conditional_oracle(parity_compare(), args.n))
    out = {"fidelity": {"tv": fid.tv, "expected_modifications": fid.expected_modifications,
                        "modification_budget": fid.modification_budget, "ok": fid.ok}}
    ok = fid.ok
    red = []
    t, n = args.t, args.n
    for make in (first_repeat, pair_check):
        alg = with_frozen_pass(make(t, n))
        for S in ([1, 2], [1, n], list(range(1, n + 1))):
            a, b = protocol_error(alg, S, t, n), algorithm_error(alg, S, t, n)
            good = abs(a - b) <= 1e-9
            ok &= good
            red.append({"alg": make.__name__, "S": S, "protocol_err": a, "algorithm_err": b, "ok": good})
    out["reduction"] = red
    out["pass"] = bool(ok)
    _emit(out)
    return 0 if ok else 1


# --- calibrate / report --------------------------------------------------------------


def cmd_calibrate(args) -> int:
    from dataclasses import asdict

    from .calibrate import calibrate_profile

    base = load_config(args.config, {"algo": args.algo, "n": args.n, "t": args.t, "p": args.p,
                                     "master_seed": args.seed, "profile": None})
    with open(args.grid) as fh:
        grid = json.load(fh)
    res = calibrate_profile(base, grid, args.screen_trials, args.confirm_trials, args.top, args.out)
    _emit({"feasible": res.feasible, "pinned": asdict(res.pinned), "out": args.out,
           "confirmed": [asdict(g) for g in res.confirmed]})
    if not res.feasible:
        print("calibrate: no grid point satisfies the memory cap; pinned the lowest-Err point with feasible=false",
              file=sys.stderr)
    return 0 if res.feasible else 1


def cmd_report(args) -> int:
    from .report import report_plots
    from .runner import read_records, summarize

    recs = read_records(args.csv)
    files = report_plots(args.csv, args.out, args.survival)
    rep = summarize(recs, mem_cap_bits=args.mem_cap_bits)
    _emit({"figures": files, "summary": json.loads(rep.to_json())})
    return 0


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="needlestream", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a stream to disk")
    g.add_argument("--dist", choices=["D0", "D1", "DS", "coin", "turnstile"], default="D0")
    g.add_argument("--t", type=int, default=10 ** 9)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--p", default=None, type=_p_arg)
    g.add_argument("--S", type=int, nargs="*", default=None)
    g.add_argument("--C", type=float, default=1.0, help="turnstile prefix constant")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=["text", "binary"], default="text")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("run-apr", help="approximate-sum accuracy or state entropy")
    a.add_argument("--mode", choices=["accuracy", "entropy"], default="accuracy")
    a.add_argument("--n", type=int, default=4096)
    a.add_argument("--gamma", type=float, default=0.5)
    a.add_argument("--B", type=float, default=64.0)
    a.add_argument("--constant", type=float, default=6000.0)
    a.add_argument("--trials", type=int, default=10 ** 4)
    a.add_argument("--nonzeros", type=int, default=None)
    a.add_argument("--density", type=float, default=None)
    a.add_argument("--max-failures", type=int, default=5)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_run_apr)

    r = sub.add_parser("run-needle", help="Monte Carlo needle detection experiment")
    r.add_argument("--config", default=None, help="JSON experiment config; flags override it")
    r.add_argument("--algo", choices=["m1", "m2", "collision"], default=None)
    r.add_argument("--profile", choices=["paper", "desk"], default=None)
    r.add_argument("--t", type=int, default=None)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--p", type=_p_arg, default=None)
    r.add_argument("--trials", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--window", type=int, default=None)
    r.add_argument("--c1", type=float, default=None)
    r.add_argument("--kout", type=float, default=None)
    r.add_argument("--grace", type=int, default=None)
    r.add_argument("--mem-cap-bits", type=float, default=None)
    r.add_argument("--timing", action="store_true")
    r.add_argument("--csv", default=None)
    r.add_argument("--report", default=None)
    r.add_argument("--survival", default=None, help="also write an M1 survival CSV here")
    r.add_argument("--survival-trials", type=int, default=1)
    r.add_argument("--survival-max-r", type=int, default=200)
    r.set_defaults(func=cmd_run_needle)

    c = sub.add_parser("run-coin", help="approximate sums of random +/-1 streams")
    c.add_argument("--n", type=int, default=4096)
    c.add_argument("--gamma", type=float, default=0.5)
    c.add_argument("--B", type=float, default=4096.0)
    c.add_argument("--constant", type=float, default=6000.0)
    c.add_argument("--trials", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--min-within", type=float, default=None)
    c.add_argument("--csv", default=None)
    c.set_defaults(func=cmd_run_coin)

    i = sub.add_parser("infocost-check", help="exact information-cost inequalities on the toy zoo")
    i.add_argument("--n-min", type=int, default=2)
    i.add_argument("--n-max", type=int, default=5)
    i.set_defaults(func=cmd_infocost_check)

    s = sub.add_parser("simulate-check", help="exact one-pass simulation and reduction checks")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--t", type=int, default=3)
    s.set_defaults(func=cmd_simulate_check)

    k = sub.add_parser("calibrate", help="grid-search detector constants and pin a profile")
    k.add_argument("--config", default=None)
    k.add_argument("--grid", required=True)
    k.add_argument("--algo", choices=["m1", "m2"], default="m2")
    k.add_argument("--t", type=int, default=None)
    k.add_argument("--n", type=int, default=None)
    k.add_argument("--p", type=_p_arg, default=None)
    k.add_argument("--seed", type=int, default=None)
    k.add_argument("--screen-trials", type=int, default=20)
    k.add_argument("--confirm-trials", type=int, default=100)
    k.add_argument("--top", type=int, default=3)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="figures and summary from a records CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--survival", default=None)
    p.add_argument("--mem-cap-bits", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def _p_arg(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"needlestream {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
