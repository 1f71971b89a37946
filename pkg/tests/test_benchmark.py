from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from ccbandit.benchmark import (
    InfeasibleError, allocation_ratio, benchmark_policy, budget_scaling_bound, equalized_allocation,
    harmonic, lemma3_root, long_term_lp, per_context_optimum, per_context_optimum_multi,
)
from ccbandit.envs import (
    ALMOST_SURE, BINARY, SIGNED, ContextSchedule, Feasibility, ProblemInstance, make_lower_bound_instance,
    make_slater_instance, random_instance,
)
from reference import grid_lp_value


def lp_reference(f, g, N, B):
    """Full LP over per-context mixtures via scipy."""
    X, K = f.shape
    c = -(N[:, None] * f).ravel()
    A_ub = (N[:, None] * g).ravel()[None]
    A_eq = np.kron(np.eye(X), np.ones(K))
    res = linprog(c, A_ub=A_ub, b_ub=[B], A_eq=A_eq, b_eq=np.ones(X), bounds=[(0, None)] * (X * K), method="highs")
    return -res.fun


def test_per_context_examples():
    pi, v = per_context_optimum([0.2, 0.9, 0.5], [-0.1, 0.0, -1.0])
    assert pi.tolist() == [0, 1, 0] and v == pytest.approx(0.9)
    pi, v = per_context_optimum([1.0, 0.0], [0.5, -0.5])
    np.testing.assert_allclose(pi, [0.5, 0.5])
    assert v == pytest.approx(0.5)
    assert grid_lp_value([1.0, 0.0], [0.5, -0.5]) == pytest.approx(0.5, abs=1e-3)
    pi, v = per_context_optimum([0.0, 1.0], [0.0, 0.5])
    assert pi.tolist() == [1, 0] and v == 0.0
    with pytest.raises(InfeasibleError):
        per_context_optimum([1.0], [0.5])


def test_per_context_vs_grid(rng):
    for _ in range(200):
        K = int(rng.integers(2, 4))
        f, g = rng.uniform(-1, 1, K), rng.uniform(-1, 1, K)
        ref = grid_lp_value(f, g, step=1e-2 if K == 3 else 1e-3)
        if not np.isfinite(ref):
            with pytest.raises(InfeasibleError):
                per_context_optimum(f, g)
            continue
        pi, v = per_context_optimum(f, g)
        assert v >= ref - 1e-9
        assert v <= ref + 2e-2
        assert pi @ g <= 1e-12 and abs(pi.sum() - 1) < 1e-12


def test_multi_resource_matches_single_when_m1(rng):
    f, g = rng.uniform(-1, 1, 4), rng.uniform(-1, 0.5, 4)
    g[0] = -0.1
    a = per_context_optimum(f, g)[1]
    assert per_context_optimum_multi(f, g[None])[1] == pytest.approx(a)
    G = np.stack([g, np.where(np.arange(4) == 0, -0.1, 0.3)])
    pi, v = per_context_optimum_multi(f, G)
    assert np.all(G @ pi <= 1e-9) and v <= a + 1e-9


def test_long_term_non_binding():
    sol = long_term_lp((np.array([[0.3, 0.8]]), np.array([[0.2, 0.5]])), np.array([10.0]), 100.0)
    assert sol.lambda_star == 0.0
    assert sol.value == pytest.approx(8.0)
    assert sol.policy[0].tolist() == [0, 0, 1]


def test_long_term_two_contexts():
    f = np.array([[0.9], [0.5]])
    g = np.ones((2, 1))
    sol = long_term_lp((f, g), np.ones(2), 1.0)
    assert sol.value == pytest.approx(0.9)
    assert 0.5 - 1e-9 <= sol.lambda_star <= 0.9 + 1e-9
    assert sol.duality_gap <= 1e-6
    assert budget_scaling_bound(sol, 2.0, 1.0, "additive") == pytest.approx(0.9 + sol.lambda_star)
    assert long_term_lp((f, g), np.ones(2), 2.0).value == pytest.approx(1.4)
    assert budget_scaling_bound(sol, 2.0, 1.0, "additive") >= 1.4 - 1e-9
    assert budget_scaling_bound(sol, 1.0, 1.0, "additive") == sol.value
    assert budget_scaling_bound(sol, 1.0, 1.0, "multiplicative") == sol.value
    with pytest.raises(ValueError):
        budget_scaling_bound(sol, 1.0, 0.0, "multiplicative")


def test_lower_bound_opt():
    for tau in (1, 3, 10):
        inst = make_lower_bound_instance(100, 10, tau)
        sol = long_term_lp(inst, np.full(10, 10.0), 10.0)
        assert sol.value == pytest.approx(10 * tau * 0.1, abs=1e-9)
    sol = long_term_lp(make_lower_bound_instance(100, 10, 3), np.full(10, 10.0), 10.0)
    assert sol.policy[2, 1] == pytest.approx(1.0)


def random_lp(rng, signed=False):
    X, K = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    inst = random_instance(rng, X, K, cost_law=SIGNED if signed else BINARY)
    N = rng.integers(0, 20, X).astype(float)
    B = float(rng.uniform(0, 1) * N.sum())
    return inst, N, B


@pytest.mark.parametrize("signed", [False, True])
def test_long_term_against_linprog_and_duality(rng, signed):
    for _ in range(60):
        inst, N, B = random_lp(rng, signed)
        sol = long_term_lp(inst, N, B)
        f, g = inst.f_star, inst.g_star[0]
        assert sol.value == pytest.approx(lp_reference(f, g, N, B), abs=1e-6)
        assert sol.duality_gap <= 1e-6
        assert sol.complementary_slackness(f, g) <= 1e-6
        assert sol.consumption <= B + 1e-9
        np.testing.assert_allclose(sol.policy.sum(axis=1), 1.0)
        if B > 0:
            assert sol.lambda_star <= max(sol.value, 0) / B + 1e-9


def test_weak_duality_random_policies(rng):
    for _ in range(30):
        inst, N, B = random_lp(rng)
        f, g = inst.f_star, inst.g_star[0]
        sol = long_term_lp(inst, N, B)
        for _ in range(100):
            pi = rng.dirichlet(np.ones(inst.K), inst.n_contexts)
            used = float(N @ np.sum(pi * g, axis=1))
            if used > B:
                shrink = B / used
                pi = pi * shrink
                pi[:, 0] += 1 - shrink
            val = float(N @ np.sum(pi * f, axis=1))
            assert val <= sol.dual_value + 1e-9
            assert val <= sol.dual_objective(float(rng.uniform(0, 3)), f, g) + 1e-9


def test_multiplicative_bound_dominates(rng):
    for _ in range(100):
        inst, N, B = random_lp(rng)
        if B <= 0:
            continue
        low = long_term_lp(inst, N, B / 2)
        if low.budget == 0:
            continue
        assert budget_scaling_bound(low, B, B / 2, "multiplicative") >= long_term_lp(inst, N, B).value - 1e-9
        assert budget_scaling_bound(low, B, B / 2, "additive") >= long_term_lp(inst, N, B).value - 1e-9


def test_equalized_allocation():
    alpha, H = equalized_allocation(1)
    assert alpha.tolist() == [1.0] and H == 1.0
    alpha, H = equalized_allocation(4)
    assert H == pytest.approx(25 / 12)
    assert allocation_ratio(alpha) == pytest.approx(H, abs=1e-12)
    assert harmonic(8) == pytest.approx(761 / 280)
    for L in (1, 4, 8, 16, 64):
        a, h = equalized_allocation(L)
        assert a.sum() == pytest.approx(1.0)
        assert abs(allocation_ratio(a) - h) <= 1e-9
    with pytest.raises(ValueError):
        equalized_allocation(0)


def test_benchmark_kinds_coincide_when_best_arm_free():
    f = np.array([[0.0, 0.7, 0.9], [0.0, 0.4, 0.2]])
    g = np.array([[[0.0, 0.0, 0.5], [0.0, 0.0, 0.8]]])
    inst = ProblemInstance(f, g, ContextSchedule.cyclic([0, 1]), (BINARY,), 0, 0.0)
    # the long-term LP with zero budget, almost-sure and in-expectation all pick arm 1
    tables = [benchmark_policy(inst, k, T=10).table for k in ("in_expectation", "almost_sure", "long_term")]
    for t in tables[1:]:
        np.testing.assert_allclose(t, tables[0])
    assert tables[0][:, 1].tolist() == [1, 1]


def test_slater_policy_has_slack(rng):
    base = random_instance(rng, 4, 3, cost_law=SIGNED, null_arm=None)
    inst = make_slater_instance(base, 0.3)
    pol = benchmark_policy(inst, "slater")
    assert np.all(pol.per_context_cost(inst.g_star) <= -0.3 + 1e-9)
    with pytest.raises(ValueError):
        benchmark_policy(base, "slater")


def test_almost_sure_support_in_designated_set():
    f = np.array([[0.0, 0.9, 0.5, 0.3]])
    g = np.array([[[0.0, 0.5, 0.0, 0.0]]])
    inst = ProblemInstance(f, g, ContextSchedule.iid([1.0]), (BINARY,), 0, tag=Feasibility(ALMOST_SURE),
                           safe_arms=((0, 3),))
    pol = benchmark_policy(inst, "almost_sure")
    assert pol.table[0].tolist() == [0, 0, 0, 1]


def test_benchmark_ordering(rng):
    for _ in range(50):
        inst = random_instance(rng, 3, 4, cost_law=SIGNED, schedule=ContextSchedule.cyclic([0, 1, 2]))
        T = 30
        counts = inst.schedule.expected_counts(T, 3)
        vals = {}
        for kind in ("almost_sure", "in_expectation"):
            pol = benchmark_policy(inst, kind)
            vals[kind] = float(counts @ pol.per_context_reward(inst.f_star))
        lt = benchmark_policy(inst.with_budget(float(rng.uniform(0, 5))), "long_term", T=T)
        vals["long_term"] = float(counts @ lt.per_context_reward(inst.f_star))
        assert vals["almost_sure"] <= vals["in_expectation"] + 1e-9 <= vals["long_term"] + 2e-9


def test_infeasible_kind_named():
    inst = ProblemInstance(np.array([[0.5, 0.2]]), np.array([[[0.5, 0.1]]]), ContextSchedule.iid([1.0]), (BINARY,))
    with pytest.raises(InfeasibleError, match="expectation"):
        benchmark_policy(inst, "in_expectation")
    with pytest.raises(InfeasibleError, match="almost-sure"):
        benchmark_policy(inst, "almost_sure")
    with pytest.raises(InfeasibleError, match="NULL"):
        benchmark_policy(inst, "long_term", T=5)


def test_quadratic_root_bound(rng):
    a, b = rng.uniform(0, 10, 10_000), rng.uniform(0, 10, 10_000)
    x, bound = lemma3_root(a, b)
    np.testing.assert_allclose(x * x, a * x + b, rtol=1e-10)
    assert np.all(x <= bound + 1e-12)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=3), st.lists(st.floats(-1, 1), min_size=2, max_size=3))
def test_property_per_context_feasible_optimum(f, g):
    k = min(len(f), len(g))
    f, g = np.array(f[:k]), np.array(g[:k])
    if g.min() > 0:
        return
    pi, v = per_context_optimum(f, g)
    assert pi @ g <= 1e-12
    assert v >= f[g <= 0].max() - 1e-12
    assert v == pytest.approx(pi @ f)
    assert math.isfinite(v)
