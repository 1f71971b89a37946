"""JSON-configured Monte Carlo experiments with CSV/JSON output."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .benchmark import benchmark_policy
from .controller import ControllerConfig, OracleSpec, RunTrace, Scaling, ensemble_run, hard_stop_run, run
from .envs import BINARY, LONG_TERM, ProblemInstance, finite_class_around, load_instance
from .metrics import compute_metrics, mean_se, prop1_diagnostic, rate_fit

OUTPUT_ENV = "CCBANDIT_OUTPUT_ROOT"
AGGREGATE_SCHEMA = "ccbandit.aggregate/v1"
TRACE_SCHEMA = "ccbandit.trace/v1"
PROP1_SCHEMA = "ccbandit.prop1/v1"

_budget_rule = {
    "type": "object",
    "required": ["rule", "value"],
    "properties": {"rule": {"enum": ["fixed", "sqrt", "fraction"]}, "value": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["name", "horizons", "seeds", "benchmark", "controller", "oracle"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "instance": {"type": "object"},
        "instance_file": {"type": "string"},
        "budget": _budget_rule,
        "horizons": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "seeds": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                {"type": "object", "required": ["start", "count"],
                 "properties": {"start": {"type": "integer", "minimum": 0}, "count": {"type": "integer", "minimum": 1}},
                 "additionalProperties": False},
            ]
        },
        "benchmark": {"enum": ["in_expectation", "slater", "almost_sure", "long_term"]},
        "controller": {
            "type": "object",
            "properties": {
                "lyapunov": {"enum": ["quadratic", "exponential"]},
                "lyapunov_param": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "U_T": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "mode": {"enum": ["round", "cbwk", "cbwlc"]},
                "record_vectors": {"type": "boolean"},
            },
            "required": ["lyapunov"],
            "additionalProperties": False,
        },
        "oracle": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["finite", "linear", "exact"]},
                "class_size": {"type": "integer", "minimum": 1},
                "spread": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "reward_tables": {"type": "array"},
                "cost_tables": {"type": "array"},
                "features": {"type": "array"},
                "cost_features": {"type": "array"},
                "reg": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["ridge", "vaw"]},
            },
            "additionalProperties": False,
        },
        "run": {"enum": ["standard", "hard_stop", "ensemble"]},
        "hard_stop": {
            "type": "object",
            "required": ["scaling", "value"],
            "properties": {"scaling": {"enum": ["multiplicative", "additive"]}, "value": {"type": "number"}},
            "additionalProperties": False,
        },
        "ensemble": {
            "type": "object",
            "properties": {"guesses": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                           "epoch_length": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "diagnostics": {
            "type": "object",
            "properties": {"prop1": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "traces": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
    "oneOf": [{"required": ["instance"]}, {"required": ["instance_file"]}],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> dict:
    """Schema check; errors name the offending field path."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    errors = sorted(validator.iter_errors(public), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {e.message}")
    hz = cfg["horizons"]
    if list(hz) != sorted(set(hz)):
        raise ConfigError("config field horizons: must be strictly increasing")
    if cfg.get("run") == "hard_stop" and "hard_stop" not in cfg:
        raise ConfigError("config field hard_stop: required when run is hard_stop")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as err:
        raise OSError(f"cannot read config {path}: {err.strerror}") from err
    cfg = validate_config(cfg)
    cfg["_base_dir"] = str(path.resolve().parent)
    return cfg


def seed_list(cfg: dict, seed_base: int = 0) -> list:
    """Offset seeds in ascending order, so the listing order in a config never matters."""
    s = cfg["seeds"]
    seeds = list(range(s["start"], s["start"] + s["count"])) if isinstance(s, dict) else list(s)
    return sorted(int(x) + int(seed_base) for x in seeds)


def budget_for(cfg: dict, T: int, default: float) -> float:
    rule = cfg.get("budget")
    if rule is None:
        return float(default)
    v = float(rule["value"])
    return {"fixed": v, "sqrt": v * math.sqrt(T), "fraction": v * T}[rule["rule"]]


def base_instance(cfg: dict) -> ProblemInstance:
    if "instance" in cfg:
        return ProblemInstance.from_json(cfg["instance"])
    p = Path(cfg["instance_file"])
    if not p.is_absolute():
        p = Path(cfg.get("_base_dir", ".")) / p
    return load_instance(p)


def oracle_spec(cfg: dict, inst: ProblemInstance) -> OracleSpec:
    o = cfg["oracle"]
    kind = o["kind"]
    if kind == "exact":
        return OracleSpec.exact(inst)
    if kind == "finite":
        eta = o.get("eta", 0.125)
        if "reward_tables" in o:
            costs = tuple(np.asarray(c, dtype=float) for c in o["cost_tables"])
            return OracleSpec("finite", np.asarray(o["reward_tables"], dtype=float), costs, eta=eta)
        rng = np.random.default_rng(o.get("seed", 0))
        n, spread = o.get("class_size", 8), o.get("spread", 0.3)
        reward = finite_class_around(inst.f_star, n, spread, rng, keep_zero_arm=inst.null_arm)
        costs = []
        for g, law in zip(inst.g_star, inst.cost_laws):
            low = 0.0 if law == BINARY else -1.0
            costs.append(finite_class_around(g, n, spread, rng, low, 1.0, keep_zero_arm=inst.null_arm))
        return OracleSpec("finite", reward, tuple(costs), eta=eta)
    feats = np.asarray(o["features"], dtype=float)
    cost_feats = tuple(np.asarray(c, dtype=float) for c in o.get("cost_features", [o["features"]] * inst.m))
    return OracleSpec("linear", feats, cost_feats, reg=o.get("reg", 1.0), mode=o.get("mode", "ridge"))


def controller_config(cfg: dict) -> ControllerConfig:
    c = cfg["controller"]
    param = c.get("lyapunov_param", "auto")
    U = c.get("U_T", "auto")
    return ControllerConfig(
        lyapunov_kind=c["lyapunov"],
        lyapunov_param=None if param == "auto" else float(param),
        U_T=None if U == "auto" else float(U),
        mode=c.get("mode", "round"),
        record_vectors=bool(c.get("record_vectors", False)),
    )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


@dataclass
class HorizonResult:
    T: int
    budget: float
    finals: dict              # metric -> per-seed values (seed order as in ``seeds``)
    benchmark: dict
    trace: Optional[RunTrace] = None
    prop1: object = None


@dataclass
class ExperimentResult:
    name: str
    seeds: list
    horizons: list
    per_horizon: list
    aggregate_rows: list
    fits: dict
    paths: dict = field(default_factory=dict)

    def means(self, metric: str) -> np.ndarray:
        return np.array([float(np.mean(h.finals[metric])) for h in self.per_horizon])


def run_horizon(cfg: dict, T: int, seeds: list, keep_trace: bool = False) -> HorizonResult:
    inst0 = base_instance(cfg)
    B = budget_for(cfg, T, inst0.budget)
    inst = inst0.with_budget(B)
    spec = oracle_spec(cfg, inst)
    ccfg = controller_config(cfg)
    kind = cfg["benchmark"]
    mode = cfg.get("run", "standard")
    if mode == "hard_stop":
        hs = cfg["hard_stop"]
        trace = hard_stop_run(inst, ccfg, spec, T, B, Scaling(hs["scaling"], float(hs["value"])), seeds)
    elif mode == "ensemble":
        en = cfg.get("ensemble", {})
        trace = ensemble_run(inst, ccfg, spec, T, seeds, en.get("guesses"), en.get("epoch_length"))
    else:
        trace = run(inst, ccfg, spec, T, seeds)

    policy = benchmark_policy(inst, kind, T=T)
    ms = compute_metrics(trace, policy, inst, B)
    S = len(seeds)
    finals = {
        "pseudo_regret": ms.pseudo_regret[:, -1] if T else np.zeros(S),
        "realized_regret": ms.realized_regret[:, -1] if T else np.zeros(S),
        "ccv": ms.ccv[:, -1, 0] if T else np.full(S, -B if kind == LONG_TERM else 0.0),
        "ccv_expected": (ms.cum_expected_cost[:, -1, 0] - ms.budget) if T else np.zeros(S),
        "cum_cost": ms.cum_cost[:, -1, 0] if T else np.zeros(S),
        "final_queue": ms.queue[:, -1, 0] if T else np.zeros(S),
        "oracle_sq_error": trace.oracle_sq_error_truth.sum(axis=1),
    }
    if mode == "hard_stop":
        finals["stop_round"] = np.where(trace.stop_round == 0, T + 1, trace.stop_round).astype(float)
        finals["true_cost"] = trace.costs.sum(axis=(1, 2))
    if mode == "ensemble" and trace.epochs:
        finals["master_top_share"] = np.array(
            [np.bincount(c, minlength=len(trace.meta["guesses"])).max() / c.size for c in trace.epochs["chosen"]])
    bench_report = {
        "kind": kind,
        "horizon": T,
        "budget": B,
        "value": float(np.sum(policy.per_context_reward(inst.f_star) *
                              (inst.schedule.expected_counts(T, inst.n_contexts) if not inst.schedule.is_adaptive
                               else np.zeros(inst.n_contexts)))),
        "policy": policy.table.tolist(),
    }
    if policy.lp is not None:
        bench_report["dual"] = {"lambda_star": policy.lp.lambda_star, "mu": policy.lp.mu.tolist(),
                                "dual_value": policy.lp.dual_value}
    res = HorizonResult(T, B, finals, bench_report, trace if keep_trace else None)
    if cfg.get("diagnostics", {}).get("prop1"):
        res.prop1 = prop1_diagnostic(trace, policy, inst, float(trace.meta["U_T"][0]) if S else 1.0)
    return res


def write_trace_csv(trace: RunTrace, s: int, path: Path):
    m = trace.m
    cols = ["t", "context", "action", "reward"] + [f"cost_{i}" for i in range(m)] + \
        [f"queue_{i}" for i in range(m)] + ["gamma", "normalizer", "surrogate", "saturated"]
    if trace.frozen is not None:
        cols.append("frozen")
    buf = io.StringIO()
    buf.write(f"# schema={TRACE_SCHEMA} seed={int(trace.seeds[s])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for t in range(trace.T):
        row = [t + 1, trace.contexts[s, t], trace.actions[s, t], trace.rewards[s, t]]
        row += list(trace.costs[s, t]) + list(trace.queue[s, t])
        row += [trace.gamma[s, t], trace.normalizer[s, t], trace.chosen_surrogate[s, t], int(trace.saturated[s, t])]
        if trace.frozen is not None:
            row.append(int(trace.frozen[s, t]))
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def aggregate(per_horizon: list) -> tuple:
    """Rows (horizon, metric, mean, se, n) and one rate fit per metric."""
    metrics = sorted(per_horizon[0].finals) if per_horizon else []
    horizons = [h.T for h in per_horizon]
    rows, fits = [], {}
    for name in metrics:
        means = []
        for h in per_horizon:
            mu, se = mean_se(np.asarray(h.finals[name], dtype=float)) if len(h.finals[name]) else (math.nan, math.nan)
            means.append(float(mu))
            rows.append((h.T, name, float(mu), float(se), len(h.finals[name])))
        if len(horizons) >= 2 and all(T > 0 for T in horizons):
            fits[name] = rate_fit(horizons, means)
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows, fits


def aggregate_csv_text(name: str, rows: list, fits: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={AGGREGATE_SCHEMA} experiment={name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", "metric", "mean", "se", "n_seeds", "slope", "r_squared", "dropped_horizons"])
    for T, metric, mu, se, n in rows:
        fit = fits.get(metric)
        slope = fit.slope if fit else math.nan
        r2 = fit.r_squared if fit else math.nan
        dropped = ";".join(str(int(d)) for d in fit.dropped) if fit else ""
        w.writerow([T, metric, _fmt(mu), _fmt(se), n, _fmt(slope), _fmt(r2), dropped])
    return buf.getvalue()


def output_dir(cfg: dict, override: Optional[str] = None) -> Path:
    root = Path(os.environ.get(OUTPUT_ENV, "ccbandit_output"))
    sub = override or cfg.get("output", {}).get("dir") or cfg["name"]
    p = Path(sub)
    return p if p.is_absolute() else root / p


def run_experiment(cfg: dict, seed_base: int = 0, out: Optional[str] = None, write: bool = True,
                   keep_traces: bool = False) -> ExperimentResult:
    """Execute every (horizon, seed) cell of ``cfg`` and write the outputs."""
    cfg = validate_config(copy.deepcopy(cfg)) if "_base_dir" not in cfg else cfg
    seeds = seed_list(cfg, seed_base)
    want_traces = cfg.get("output", {}).get("traces", True)
    per = [run_horizon(cfg, T, seeds, keep_trace=keep_traces or (write and want_traces)) for T in cfg["horizons"]]
    rows, fits = aggregate(per)
    res = ExperimentResult(cfg["name"], seeds, list(cfg["horizons"]), per, rows, fits)
    if not write:
        return res
    d = output_dir(cfg, out)
    try:
        d.mkdir(parents=True, exist_ok=True)
        agg = d / "aggregate.csv"
        agg.write_text(aggregate_csv_text(cfg["name"], rows, fits))
        rep = d / "benchmark.json"
        rep.write_text(json.dumps([h.benchmark for h in per], indent=2, sort_keys=True) + "\n")
        res.paths = {"aggregate": agg, "benchmark": rep, "traces": []}
        if want_traces:
            for h in per:
                for s, seed in enumerate(seeds):
                    p = d / f"trace_T{h.T}_seed{seed}.csv"
                    write_trace_csv(h.trace, s, p)
                    res.paths["traces"].append(p)
                if not keep_traces:
                    h.trace = None
        for h in per:
            if h.prop1 is not None:
                p = d / f"prop1_T{h.T}.csv"
                write_prop1_csv(h.prop1, p)
                res.paths.setdefault("prop1", []).append(p)
    except OSError as err:
        raise OSError(f"failed writing experiment output under {d}: {err}") from err
    return res


def write_prop1_csv(result, path: Path):
    buf = io.StringIO()
    buf.write(f"# schema={PROP1_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "lhs", "rhs", "slack", "slack_se"])
    for i in range(len(result.t)):
        w.writerow([int(result.t[i]), _fmt(result.lhs_mean[i]), _fmt(result.rhs_mean[i]),
                    _fmt(result.slack_mean[i]), _fmt(result.slack_se[i])])
    path.write_text(buf.getvalue())


def read_aggregate(path) -> list:
    """Parse an aggregate CSV back into dict rows (schema line checked)."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(f"# schema={AGGREGATE_SCHEMA}"):
        raise ValueError(f"{path} is not a {AGGREGATE_SCHEMA} file")
    return list(csv.DictReader(text[1:]))
