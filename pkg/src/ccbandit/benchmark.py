"""Offline benchmark solvers for the constrained problem.

Round-wise benchmarks solve a tiny LP per context (one linear constraint over
the simplex). The long-term budget benchmark is solved through its Lagrangian:
for a fixed multiplier the problem splits into per-context argmaxes, and a
bisection on the multiplier finds the point where consumption meets the budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .envs import ALMOST_SURE, IN_EXPECTATION, LONG_TERM, SLATER, ProblemInstance

LP_TOL = 1e-10
MAX_BISECT = 200


class InfeasibleError(ValueError):
    pass


def per_context_optimum(f_row, g_row, slack: float = 0.0):
    """max <f, pi> s.t. <g, pi> <= -slack over the simplex, by vertex enumeration.

    Returns (pi, value). An optimum is always supported on one arm or on two arms
    mixed so that the constraint is tight.
    """
    f = np.asarray(f_row, dtype=float)
    g = np.asarray(g_row, dtype=float)
    if f.shape != g.shape or f.ndim != 1:
        raise ValueError("f and g rows must be 1-d and of equal length")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise ValueError("rows must be finite")
    K = f.shape[0]
    rhs = -float(slack)
    best_val = -np.inf
    best_pi = None

    single = np.flatnonzero(g <= rhs)
    if single.size:
        a = single[np.argmax(f[single])]
        best_val = f[a]
        best_pi = np.zeros(K)
        best_pi[a] = 1.0

    lo = np.flatnonzero(g < rhs)
    hi = np.flatnonzero(g > rhs)
    if lo.size and hi.size:
        ga, gb = g[lo][:, None], g[hi][None, :]
        theta = (gb - rhs) / (gb - ga)  # weight on the low-cost arm
        vals = theta * f[lo][:, None] + (1.0 - theta) * f[hi][None, :]
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[i, j] > best_val + 1e-15:
            best_val = vals[i, j]
            best_pi = np.zeros(K)
            best_pi[lo[i]] = theta[i, j]
            best_pi[hi[j]] = 1.0 - theta[i, j]

    if best_pi is None:
        raise InfeasibleError(f"no mixture of arms has expected cost <= {rhs:g}")
    return best_pi, float(best_val)


def per_context_optimum_multi(f_row, g_rows, slack: float = 0.0):
    """Same problem with several cost constraints (m > 1), via scipy's LP solver."""
    from scipy.optimize import linprog

    f = np.asarray(f_row, dtype=float)
    G = np.atleast_2d(np.asarray(g_rows, dtype=float))
    if G.shape[0] == 1:
        return per_context_optimum(f, G[0], slack)
    K = f.shape[0]
    res = linprog(-f, A_ub=G, b_ub=np.full(G.shape[0], -slack), A_eq=np.ones((1, K)), b_eq=[1.0],
                  bounds=[(0, None)] * K, method="highs")
    if res.status != 0:
        raise InfeasibleError(f"no mixture satisfies all {G.shape[0]} cost constraints")
    pi = np.clip(res.x, 0.0, None)
    pi /= pi.sum()
    return pi, float(f @ pi)


@dataclass(frozen=True)
class LpSolution:
    """Primal/dual solution of the long-term budget LP."""

    value: float
    policy: np.ndarray
    lambda_star: float
    mu: np.ndarray
    budget: float
    counts: np.ndarray
    consumption: float

    @property
    def dual_value(self) -> float:
        return self.lambda_star * self.budget + float(self.mu.sum())

    @property
    def duality_gap(self) -> float:
        return abs(self.dual_value - self.value)

    def complementary_slackness(self, f, g) -> float:
        """Largest violation of the complementary-slackness conditions."""
        scores = np.asarray(f) - self.lambda_star * np.asarray(g)
        best = np.maximum(0.0, scores.max(axis=1))
        per_arm = self.counts[:, None] * (best[:, None] - scores) * self.policy
        r1 = float(per_arm.max()) if per_arm.size else 0.0
        r2 = abs(self.lambda_star * (self.budget - self.consumption))
        return max(r1, r2)

    def dual_objective(self, lam: float, f, g) -> float:
        """Dual function at any lam >= 0: an upper bound on every feasible primal value."""
        scores = np.asarray(f) - lam * np.asarray(g)
        return lam * self.budget + float(np.sum(self.counts * np.maximum(0.0, scores.max(axis=1))))


def _choice(scores, g, prefer_high_cost: bool):
    """Per-context argmax of scores; ties broken by cost (high or low), then lowest index."""
    best = scores.max(axis=1, keepdims=True)
    tied = scores >= best
    key = np.where(tied, g if prefer_high_cost else -g, -np.inf)
    return np.argmax(key, axis=1)


def _tables(instance_or_tables):
    if isinstance(instance_or_tables, ProblemInstance):
        inst = instance_or_tables
        if inst.null_arm is None:
            raise ValueError("the long-term LP needs a NULL arm")
        if inst.m != 1:
            raise ValueError("the long-term LP supports a single resource")
        return inst.f_star, inst.g_star[0]
    f, g = instance_or_tables
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    # the NULL arm is implicit when passing raw tables
    return np.concatenate([np.zeros((f.shape[0], 1)), f], axis=1), np.concatenate([np.zeros((g.shape[0], 1)), g], axis=1)


def long_term_lp(instance, counts, budget: float) -> LpSolution:
    """max sum_x N(x) <f(x), pi(x)>  s.t.  sum_x N(x) <g(x), pi(x)> <= budget.

    ``instance`` is a ProblemInstance with a NULL arm, or a pair of raw (X, K)
    tables, in which case a NULL arm is prepended at index 0 of the returned policy.
    """
    f, g = _tables(instance)
    N = np.asarray(counts, dtype=float)
    if N.shape != (f.shape[0],) or np.any(N < 0):
        raise ValueError("context counts must be non-negative, one per context")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    X, K = f.shape
    rows = np.arange(X)

    def evaluate(lam, high):
        a = _choice(f - lam * g, g, high)
        return a, float(N @ f[rows, a]), float(N @ g[rows, a])

    def finish(lam, a_over, a_under):
        F_o, G_o = float(N @ f[rows, a_over]), float(N @ g[rows, a_over])
        F_u, G_u = float(N @ f[rows, a_under]), float(N @ g[rows, a_under])
        theta = 0.0 if G_o == G_u else (budget - G_u) / (G_o - G_u)
        theta = min(max(theta, 0.0), 1.0)
        pol = np.zeros((X, K))
        pol[rows, a_over] += theta
        pol[rows, a_under] += 1.0 - theta
        value = theta * F_o + (1 - theta) * F_u
        used = theta * G_o + (1 - theta) * G_u
        scores = f - lam * g
        mu = N * np.maximum(0.0, scores.max(axis=1))
        return LpSolution(float(value), pol, float(lam), mu, float(budget), N, float(used))

    a0, _, G0 = evaluate(0.0, high=False)
    if G0 <= budget + LP_TOL:
        return finish(0.0, a0, a0)

    pos = g[g > 0]
    lo, hi = 0.0, 2.0 / max(pos.min() if pos.size else 1.0, 1e-12)
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        a_under, _, G_under = evaluate(mid, high=False)
        if G_under <= budget:
            a_over, _, G_over = evaluate(mid, high=True)
            if G_over >= budget:
                # mid sits exactly on a breakpoint that straddles the budget
                return finish(mid, a_over, a_under)
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break

    a_over, F_o, G_o = evaluate(lo, high=True)
    a_under, F_u, G_u = evaluate(hi, high=False)
    # both choices are optimal at the breakpoint where their Lagrangians meet
    lam = lo if G_o == G_u else (F_o - F_u) / (G_o - G_u)
    lam = min(max(lam, lo), hi)
    return finish(lam, a_over, a_under)


def budget_scaling_bound(lp_at_reduced: LpSolution, B: float, B_prime: float, mode: str) -> float:
    """Upper bound on OPT(B) from the LP solved at a smaller budget B'."""
    if B_prime <= 0:
        raise ValueError("reduced budget must be positive")
    if B < B_prime:
        raise ValueError("need B >= B'")
    if mode == "multiplicative":
        return (B / B_prime) * lp_at_reduced.value
    if mode == "additive":
        return lp_at_reduced.value + lp_at_reduced.lambda_star * (B - B_prime)
    raise ValueError(f"unknown scaling mode {mode!r}")


def harmonic(L: int) -> float:
    return math.fsum(1.0 / l for l in range(1, L + 1))


def allocation_ratio(alpha) -> float:
    """Worst-case over tau of tau / sum_{l <= tau} l * alpha_l."""
    alpha = np.asarray(alpha, dtype=float)
    l = np.arange(1, alpha.shape[0] + 1)
    earned = np.cumsum(l * alpha)
    with np.errstate(divide="ignore"):
        return float(np.max(np.where(earned > 0, l / earned, np.inf)))


def equalized_allocation(L: int):
    """Budget split alpha_l proportional to 1/l, and its competitive ratio H(L)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    H = harmonic(L)
    alpha = 1.0 / (np.arange(1, L + 1) * H)
    return alpha, H


@dataclass(frozen=True)
class StationaryPolicy:
    table: np.ndarray
    kind: str
    lp: Optional[LpSolution] = None

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if np.any(t < -1e-12) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("policy rows must lie on the simplex")

    def per_context_reward(self, f_star) -> np.ndarray:
        return np.sum(self.table * np.asarray(f_star), axis=1)

    def per_context_cost(self, g_star) -> np.ndarray:
        """(m, X) expected cost per context."""
        return np.sum(self.table[None] * np.asarray(g_star), axis=2)


def benchmark_policy(instance: ProblemInstance, kind: str, T: Optional[int] = None, counts=None) -> StationaryPolicy:
    """Optimal stationary policy for one of the four benchmark classes."""
    f, g = instance.f_star, instance.g_star
    X, K = f.shape
    if kind in (IN_EXPECTATION, SLATER):
        slack = 0.0
        if kind == SLATER:
            if instance.tag.kind != SLATER:
                raise ValueError("Slater benchmark requested for an instance without a Slater certificate")
            slack = instance.tag.epsilon
        table = np.zeros((X, K))
        for x in range(X):
            try:
                table[x], _ = per_context_optimum_multi(f[x], g[:, x, :], slack)
            except InfeasibleError as err:
                name = "Slater feasibility" if kind == SLATER else "feasibility in expectation"
                raise InfeasibleError(f"context {x} violates {name}: {err}") from None
        return StationaryPolicy(table, kind)
    if kind == ALMOST_SURE:
        safe = instance.surely_safe_mask()
        if not np.all(safe.any(axis=1)):
            raise InfeasibleError("almost-sure feasibility fails: a context has no surely non-positive-cost arm")
        a = np.argmax(np.where(safe, f, -np.inf), axis=1)
        table = np.zeros((X, K))
        table[np.arange(X), a] = 1.0
        return StationaryPolicy(table, kind)
    if kind == LONG_TERM:
        if instance.null_arm is None:
            raise InfeasibleError("long-term budget feasibility requires a NULL arm")
        if counts is None:
            if T is None:
                raise ValueError("long-term benchmark needs the horizon or explicit context counts")
            counts = instance.schedule.expected_counts(T, X)
        sol = long_term_lp(instance, counts, instance.budget)
        return StationaryPolicy(sol.policy, kind, sol)
    raise ValueError(f"unknown benchmark kind {kind!r}")


def lemma3_root(a, b):
    """Positive root of x^2 = a x + b and the bound a + sqrt(b) it never exceeds."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("need a, b >= 0")
    x = 0.5 * (a + np.sqrt(a * a + 4.0 * b))
    return x, a + np.sqrt(b)
