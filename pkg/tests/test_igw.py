from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ccbandit.igw import igw_sample, igw_solve, lemma1_gap, sample_from_uniform
from reference import igw_reference


def test_equal_losses_give_uniform():
    d = igw_solve(np.full(4, 0.3), 7.0)
    np.testing.assert_array_equal(d.probs, np.full(4, 0.25))
    assert d.normalizer == 4.0


def test_zero_gamma_is_uniform():
    d = igw_solve([0.0, 1.0], 0.0)
    np.testing.assert_array_equal(d.probs, [0.5, 0.5])
    assert d.normalizer == 2.0


def test_two_arm_closed_form():
    d = igw_solve([0.0, 2.0], 1.0)
    lam = np.sqrt(5.0) - 1.0
    assert d.normalizer == pytest.approx(lam, abs=1e-10)
    assert d.normalizer ** 2 + 2 * d.normalizer - 4 == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(d.probs, [0.8090170, 0.1909830], atol=1e-7)


def test_matches_root_finder_reference(rng):
    for _ in range(200):
        K = int(rng.integers(2, 20))
        v = rng.uniform(-1, 1, K)
        g = float(10 ** rng.uniform(-2, 3))
        d = igw_solve(v, g)
        p, lam = igw_reference(v, g)
        np.testing.assert_allclose(d.probs, p, atol=1e-10)
        assert d.normalizer == pytest.approx(lam, abs=1e-9)


def test_batch_rows_equal_single_calls(rng):
    V = rng.uniform(-1, 1, (30, 6))
    G = 10 ** rng.uniform(-2, 3, 30)
    batch = igw_solve(V, G)
    for i in range(30):
        single = igw_solve(V[i], G[i])
        np.testing.assert_array_equal(batch.probs[i], single.probs)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        igw_solve([0.0, np.nan], 1.0)
    with pytest.raises(ValueError):
        igw_solve([0.0], 1.0)
    with pytest.raises(ValueError):
        igw_solve([0.0, 1.0], -1.0)


def test_greedy_arm_is_lowest_index_minimiser():
    d = igw_solve([0.5, 0.1, 0.1, 0.9], 3.0)
    assert d.greedy_arm == 1
    assert d.probs[1] == d.probs[2]


def test_sampler_point_mass_limit():
    p = np.array([1.0 - 3e-16, 1e-16, 1e-16, 1e-16])
    rng = np.random.default_rng(0)
    draws = [igw_sample(type("D", (), {"probs": p})(), rng) for _ in range(10_000)]
    assert np.mean(np.array(draws) == 0) >= 0.999


def test_sampler_uniform_frequencies():
    rng = np.random.default_rng(1)
    u = rng.random(100_000)
    arms = sample_from_uniform(np.tile(np.full(4, 0.25), (u.size, 1)), u)
    freq = np.bincount(arms, minlength=4) / u.size
    np.testing.assert_allclose(freq, 0.25, atol=0.01)


def test_sampler_igw_frequency_and_chi_squared():
    from scipy.stats import chisquare

    d = igw_solve([0.0, 2.0], 1.0)
    rng = np.random.default_rng(2)
    n = 100_000
    arms = sample_from_uniform(np.tile(d.probs, (n, 1)), rng.random(n))
    counts = np.bincount(arms, minlength=2)
    assert counts[0] / n == pytest.approx(0.809, abs=0.01)
    assert chisquare(counts, d.probs * n).pvalue > 1e-4


def test_gap_inequality_examples():
    v = np.array([0.2, -0.4, 0.9])
    p = igw_solve(v, 2.0).probs
    lhs, rhs = lemma1_gap(v, v, p, 2.0)
    assert lhs == pytest.approx(0.0, abs=1e-15)
    assert rhs == pytest.approx(3 / 4)
    lhs, rhs = lemma1_gap([0.0, 2.0], [0.0, 2.0], [1.0, 0.0], 1.0)
    assert lhs == pytest.approx(0.3819660, abs=1e-7)
    assert rhs == pytest.approx(1.0)


def test_gap_inequality_rejects_non_simplex():
    with pytest.raises(ValueError):
        lemma1_gap([0, 1], [0, 1], [0.7, 0.7], 1.0)
    with pytest.raises(ValueError):
        lemma1_gap([0, 1], [0, 1], [0.5, 0.5], 0.0)


losses = st.integers(2, 32).flatmap(
    lambda K: arrays(np.float64, K, elements=st.floats(-1, 1, allow_nan=False)))
gammas = st.floats(0.0, 1e3, allow_nan=False)


@given(losses, gammas)
def test_property_normalization_and_range(v, g):
    d = igw_solve(v, g)
    K = v.size
    assert abs(d.probs.sum() - 1.0) <= 1e-9
    assert 1 - 1e-9 <= d.normalizer <= K + 1e-9
    assert np.all(d.probs > 0)


@given(losses, st.floats(0.01, 1e3))
def test_property_monotone_in_gap(v, g):
    d = igw_solve(v, g)
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(d.probs[order]) <= 1e-15)
    assert d.probs[np.argmin(v)] == pytest.approx(d.probs.max())


@given(st.integers(2, 16), st.floats(1.0, 1e6), st.integers(0, 2**31))
def test_property_large_gamma_concentrates(K, g, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, K)
    v[0] = v.min() - 0.05
    gaps = v - v.min()
    d = igw_solve(v, g)
    bound = 1 - K / (2 * g * gaps[gaps > 0].min())
    assert d.probs[0] >= bound - 1e-12


@given(st.integers(2, 32), st.floats(0.01, 1e3), st.integers(0, 2**31))
def test_property_gap_inequality(K, g, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, K)
    vh = rng.uniform(-1, 1, K)
    mu = rng.dirichlet(np.ones(K))
    lhs, rhs = lemma1_gap(vh, v, mu, g)
    assert lhs <= rhs + 1e-8
