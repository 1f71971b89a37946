"""Command line entry point: ``ccbandit <subcommand>``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import benchmark_policy, equalized_allocation
from .controller import ControllerConfig, Scaling
from .envs import load_instance
from .experiment import load_config, output_dir, read_aggregate, run_experiment
from .metrics import competitive_ratio_experiment, open_loop_ratio, rate_fit


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg, seed_base=args.seed_base, out=args.output)
    print(f"wrote {res.paths['aggregate']}")
    for name in ("pseudo_regret", "ccv"):
        fit = res.fits.get(name)
        if fit is not None:
            print(f"{name}: slope={fit.slope:.4f} r2={fit.r_squared:.4f}")
    return 0


def cmd_bench(args) -> int:
    inst = load_instance(args.instance)
    pol = benchmark_policy(inst, args.kind, T=args.T)
    counts = inst.schedule.expected_counts(args.T, inst.n_contexts) if args.T else np.ones(inst.n_contexts)
    report = {
        "kind": args.kind,
        "value": float(np.sum(pol.per_context_reward(inst.f_star) * counts)),
        "policy": pol.table.tolist(),
    }
    if pol.lp is not None:
        report["dual"] = {"lambda_star": pol.lp.lambda_star, "mu": pol.lp.mu.tolist()}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def cmd_lowerbound(args) -> int:
    L = int(args.T // args.B)
    alpha, H = equalized_allocation(L)
    print(f"L={L} equalized-allocation ratio (expected value) = {open_loop_ratio(args.T, args.B, alpha):.9f}")
    print(f"analytic floor H(L) = {H:.9f}")
    if not args.tau_sweep:
        return 0
    cfg = ControllerConfig(lyapunov_kind="exponential", mode="cbwk", U_T=args.U)
    res = competitive_ratio_experiment(args.T, args.B, cfg, range(args.seed_base, args.seed_base + args.seeds),
                                       Scaling("multiplicative", args.c))
    print("tau,opt,alg,ratio,harmonic_floor")
    for r in res.table:
        print(f"{r['tau']},{r['opt']:.9g},{r['alg']:.9g},{r['ratio']:.9g},{res.harmonic_floor:.9g}")
    print(f"worst ratio over tau = {res.worst_ratio:.6g}")
    return 0


def cmd_prop1(args) -> int:
    cfg = load_config(args.config)
    cfg.setdefault("diagnostics", {})["prop1"] = True
    cfg.setdefault("output", {})["traces"] = False
    res = run_experiment(cfg, seed_base=args.seed_base, out=args.output)
    ok = True
    for h in res.per_horizon:
        holds = h.prop1.holds(3.0)
        ok &= holds
        print(f"T={h.T}: min slack/SE = {h.prop1.min_z:.3f} -> {'PASS' if holds else 'FAIL'}")
    print(f"wrote {output_dir(cfg, args.output)}")
    return 0 if ok else 1


def cmd_ratefit(args) -> int:
    rows = read_aggregate(args.aggregate)
    by_metric = {}
    for r in rows:
        by_metric.setdefault(r["metric"], []).append((int(r["horizon"]), float(r["mean"])))
    for name in sorted(by_metric):
        pts = sorted(by_metric[name])
        if len(pts) < 2:
            continue
        fit = rate_fit([p[0] for p in pts], [p[1] for p in pts])
        extra = f" dropped={list(fit.dropped)}" if fit.dropped else ""
        print(f"{name}: slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r_squared:.4f}{extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccbandit", description="Constrained contextual bandit experiments")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run an experiment config")
    s.add_argument("config")
    s.add_argument("--seed-base", type=int, default=0)
    s.add_argument("--output", default=None, help="output directory (relative paths go under $CCBANDIT_OUTPUT_ROOT)")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="solve a benchmark for an instance file")
    b.add_argument("instance")
    b.add_argument("--kind", required=True, choices=["in_expectation", "slater", "almost_sure", "long_term"])
    b.add_argument("--T", type=int, default=None)
    b.add_argument("--output", default=None)
    b.set_defaults(func=cmd_bench)

    lb = sub.add_parser("lowerbound", help="lower-bound family: equalized allocation and tau sweep")
    lb.add_argument("--T", type=int, required=True)
    lb.add_argument("--B", type=float, required=True)
    lb.add_argument("--tau-sweep", action="store_true")
    lb.add_argument("--seeds", type=int, default=20)
    lb.add_argument("--seed-base", type=int, default=0)
    lb.add_argument("--c", type=float, default=1.0, help="multiplicative budget scaling constant")
    lb.add_argument("--U", type=float, default=None, help="oracle error bound (default: log of the class size)")
    lb.set_defaults(func=cmd_lowerbound)

    d = sub.add_parser("diagnose-prop1", help="Monte Carlo check of the drift-plus-regret inequality")
    d.add_argument("config")
    d.add_argument("--seed-base", type=int, default=0)
    d.add_argument("--output", default=None)
    d.set_defaults(func=cmd_prop1)

    r = sub.add_parser("ratefit", help="fit log-log growth exponents from an aggregate CSV")
    r.add_argument("aggregate")
    r.set_defaults(func=cmd_ratefit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
