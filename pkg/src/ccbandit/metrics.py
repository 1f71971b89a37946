"""Regret/CCV metrics, the drift-inequality diagnostic, rate fitting and competitive ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .benchmark import StationaryPolicy, allocation_ratio, harmonic, long_term_lp
from .controller import ControllerConfig, OracleSpec, RunTrace, Scaling, hard_stop_run
from .envs import IN_EXPECTATION, LONG_TERM, SLATER, ProblemInstance, make_lower_bound_instance
from .lyapunov import LyapunovConfig


def mean_se(values, axis=0):
    """Mean and standard error along ``axis`` (SE is 0 for a single sample)."""
    v = np.asarray(values, dtype=float)
    n = v.shape[axis]
    mean = v.mean(axis=axis)
    se = v.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


@dataclass
class MetricSeries:
    """Cumulative per-round metrics, shape (S, T) or (S, T, m)."""

    pseudo_regret: np.ndarray
    realized_regret: np.ndarray
    cum_cost: np.ndarray
    cum_expected_cost: np.ndarray
    ccv: np.ndarray
    queue: np.ndarray
    kind: str
    budget: float

    @property
    def T(self) -> int:
        return self.pseudo_regret.shape[1]

    def final(self) -> dict:
        """Seed-mean and SE of the end-of-horizon metrics (first resource for CCV)."""
        out = {}
        for name, v in (("pseudo_regret", self.pseudo_regret[:, -1]),
                        ("realized_regret", self.realized_regret[:, -1]),
                        ("ccv", self.ccv[:, -1, 0]),
                        ("cum_cost", self.cum_cost[:, -1, 0]),
                        ("queue", self.queue[:, -1, 0])):
            out[name] = mean_se(v)
        return out


def _check_policy(policy: StationaryPolicy, instance: ProblemInstance, contexts):
    table = np.asarray(policy.table, dtype=float)
    if table.shape != (instance.n_contexts, instance.K):
        raise ValueError(f"benchmark policy has shape {table.shape}, expected {(instance.n_contexts, instance.K)}")
    used = np.unique(contexts)
    bad = used[np.any(~np.isfinite(table[used]), axis=1)]
    if bad.size:
        raise ValueError(f"benchmark policy is undefined on context {int(bad[0])}")
    return table


def compute_metrics(trace: RunTrace, policy: StationaryPolicy, instance: ProblemInstance,
                    budget: Optional[float] = None) -> MetricSeries:
    """Pseudo-regret against ``policy`` and constraint violation of every run in ``trace``.

    For long-term benchmarks the CCV is cumulative cost minus the budget;
    otherwise it is the cumulative cost itself.
    """
    x, a = trace.contexts, trace.actions
    table = _check_policy(policy, instance, x)
    bench = np.sum(table * instance.f_star, axis=1)[x]  # (S, T)
    got_mean = instance.f_star[x, a]
    pseudo = np.cumsum(bench - got_mean, axis=1)
    realized = np.cumsum(bench - trace.rewards, axis=1)
    cum_cost = np.cumsum(trace.costs, axis=1)
    exp_cost = np.cumsum(np.stack([g[x, a] for g in instance.g_star], axis=-1), axis=1)
    B = float(instance.budget if budget is None else budget)
    ccv = cum_cost - B if policy.kind == LONG_TERM else cum_cost.copy()
    return MetricSeries(pseudo, realized, cum_cost, exp_cost, ccv, trace.queue.copy(), policy.kind,
                        B if policy.kind == LONG_TERM else 0.0)


@dataclass
class Prop1Result:
    t: np.ndarray
    lhs_mean: np.ndarray
    rhs_mean: np.ndarray
    slack_mean: np.ndarray
    slack_se: np.ndarray

    @property
    def min_z(self) -> float:
        """Smallest slack in units of its standard error (inf when every slack is exactly 0 with SE 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.slack_se > 0, self.slack_mean / self.slack_se,
                         np.where(self.slack_mean >= 0, np.inf, -np.inf))
        return float(np.min(z))

    def holds(self, n_se: float = 3.0) -> bool:
        return bool(np.all(self.slack_mean >= -n_se * self.slack_se))


def prop1_diagnostic(trace: RunTrace, policy: StationaryPolicy, instance: ProblemInstance, U_T: float,
                     lyapunov: Optional[LyapunovConfig] = None, min_seeds: int = 30) -> Prop1Result:
    """Monte Carlo estimate of both sides of the drift-plus-regret inequality.

    lhs(t) = E Phi(Q(t)) - Phi(0) + E Regret_t
    rhs(t) = 4 sqrt(K U t) + sum_{tau=1..t} E Phi''(Q(tau))
             + 4 sqrt(K U) E sqrt(sum_{tau=0..t-1} Phi'(Q(tau))^2)

    The last expectation is the seed average of per-seed square roots. Index 0
    of every returned array is t = 0.
    """
    if policy.kind not in (IN_EXPECTATION, SLATER):
        raise ValueError("the inequality is stated for benchmarks feasible in expectation at every round")
    if trace.m != 1:
        raise ValueError("the diagnostic covers a single resource")
    cost = policy.per_context_cost(instance.g_star)
    if np.any(cost > 1e-9):
        raise ValueError("benchmark policy is not feasible in expectation")
    S, T = trace.contexts.shape
    if S < min_seeds:
        raise ValueError(f"need at least {min_seeds} seeds, got {S}")
    lyap = lyapunov or trace.lyapunov
    param = np.asarray(lyap.param, dtype=float)
    if param.ndim > 0:
        if not np.all(param == param.ravel()[0]):
            raise ValueError("all seeds must share one Lyapunov parameter")
        lyap = LyapunovConfig(lyap.kind, float(param.ravel()[0]))
    K = instance.K
    q = np.concatenate([np.zeros((S, 1)), trace.queue[:, :, 0]], axis=1)  # Q(0..T)
    phi = lyap.phi(q)
    phi0 = float(lyap.phi(0.0))
    d2 = lyap.phi_double_prime(q)
    d1 = lyap.phi_prime(q)

    bench = np.sum(policy.table * instance.f_star, axis=1)[trace.contexts]
    regret = np.concatenate([np.zeros((S, 1)), np.cumsum(bench - instance.f_star[trace.contexts, trace.actions], axis=1)], axis=1)

    t = np.arange(T + 1)
    lhs = phi - phi0 + regret
    sum_d2 = np.concatenate([np.zeros((S, 1)), np.cumsum(d2[:, 1:], axis=1)], axis=1)
    sum_d1sq = np.concatenate([np.zeros((S, 1)), np.cumsum(d1[:, :-1] ** 2, axis=1)], axis=1)
    c = math.sqrt(K * U_T)
    rhs = 4.0 * c * np.sqrt(t)[None, :] + sum_d2 + 4.0 * c * np.sqrt(sum_d1sq)
    slack = rhs - lhs
    sm, sse = mean_se(slack)
    return Prop1Result(t, lhs.mean(axis=0), rhs.mean(axis=0), sm, sse)


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    dropped: tuple


FLOOR = 1e-9


def rate_fit(horizons: Sequence[float], means: Sequence[float], min_points: int = 2) -> RateFit:
    """Least-squares line through (ln T, ln mean).

    Means are floored at 1e-9; points whose mean is non-positive or not finite
    are dropped and reported in ``dropped`` (as horizons).
    """
    T = np.asarray(horizons, dtype=float)
    y = np.asarray(means, dtype=float)
    if T.shape != y.shape:
        raise ValueError("horizons and means must have equal length")
    if np.any(np.diff(T) <= 0):
        raise ValueError("horizon grid must be strictly increasing")
    ok = np.isfinite(y) & (y > 0)
    dropped = tuple(float(v) for v in T[~ok])
    if ok.sum() < min_points:
        return RateFit(float("nan"), float("nan"), float("nan"), dropped)
    lx = np.log(T[ok])
    ly = np.log(np.maximum(y[ok], FLOOR))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, dropped)


@dataclass
class CompetitiveRatio:
    worst_ratio: float
    table: list          # rows: dict(tau, opt, alg, ratio)
    harmonic_floor: float
    L: int


def competitive_ratio_experiment(T: int, B_T: float, config: ControllerConfig, seeds: Sequence[int],
                                 scaling: Scaling = Scaling("multiplicative", 1.0), floor: float = 1e-9,
                                 oracle: str = "lower_bound_class") -> CompetitiveRatio:
    """Hard-stopped controller on every member of the lower-bound family.

    ``oracle="lower_bound_class"`` gives the learner the whole family as its
    reward class (and the known cost); ``"exact"`` pins predictions to the truth.
    """
    L = int(T // B_T)
    family = np.stack([make_lower_bound_instance(T, B_T, tau).f_star for tau in range(1, L + 1)])
    rows = []
    for tau in range(1, L + 1):
        inst = make_lower_bound_instance(T, B_T, tau)
        counts = inst.schedule.expected_counts(T, inst.n_contexts)
        opt = long_term_lp(inst, counts, B_T).value
        if oracle == "exact":
            spec = OracleSpec.exact(inst)
        else:
            spec = OracleSpec("finite", family, (inst.g_star[0][None],))
        tr = hard_stop_run(inst, config, spec, T, B_T, scaling, list(seeds))
        alg = float(np.mean(np.sum(inst.f_star[tr.contexts, tr.actions], axis=1)))
        rows.append({"tau": tau, "opt": opt, "alg": alg, "ratio": opt / max(alg, floor)})
    worst = max(r["ratio"] for r in rows)
    return CompetitiveRatio(worst, rows, harmonic(L), L)


def open_loop_ratio(T: int, B_T: float, alpha) -> float:
    """Expected-value competitive ratio of spending alpha_l * B_T in phase l of the lower-bound family."""
    L = int(T // B_T)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (L,):
        raise ValueError(f"allocation must have {L} entries")
    eps = B_T / T
    worst = 0.0
    for tau in range(1, L + 1):
        opt = B_T * tau * eps
        alg = float(np.sum(alpha[:tau] * B_T * np.arange(1, tau + 1) * eps))
        worst = max(worst, opt / alg if alg > 0 else math.inf)
    return worst


__all__ = [
    "MetricSeries", "compute_metrics", "prop1_diagnostic", "Prop1Result", "rate_fit", "RateFit",
    "competitive_ratio_experiment", "CompetitiveRatio", "open_loop_ratio", "allocation_ratio", "mean_se",
]
