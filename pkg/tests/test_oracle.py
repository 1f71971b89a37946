from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccbandit.oracle import ErrorLedger, FiniteClassOracle, LinearOracle, configured_U, oracle_regret
from reference import exp_weights_reference


def const_class(*values, X=1, K=2):
    return np.stack([np.full((X, K), v) for v in values])


def test_singleton_predicts_hypothesis():
    h = np.array([[[0.3, -0.2, 0.9]]])
    o = FiniteClassOracle(h)
    np.testing.assert_array_equal(o.predict(0), h[0, 0])


def test_linear_zero_observations_predicts_zero():
    o = LinearOracle(np.ones((2, 3, 2)))
    np.testing.assert_array_equal(o.predict(1), np.zeros(3))


def test_plus_minus_class_converges():
    o = FiniteClassOracle(const_class(1.0, -1.0))
    for _ in range(100):
        o.update(0, 0, 1.0)
    assert np.all(o.predict(0) >= 0.99)


def test_equal_hypotheses_stay_equal(rng):
    o = FiniteClassOracle(const_class(0.4, 0.4))
    for y in rng.uniform(-1, 1, 20):
        o.update(0, 1, y)
    assert o.weights[0, 0] == pytest.approx(0.5)


def test_log_weight_gap_one_step():
    o = FiniteClassOracle(const_class(0.0, 1.0))
    o.update(0, 0, 0.0)
    assert o.log_weights[0, 0] - o.log_weights[0, 1] == pytest.approx(0.125)


def test_ridge_two_observations():
    o = LinearOracle(np.ones((1, 1, 1)), reg=1.0)
    o.update(0, 0, 1.0)
    o.update(0, 0, 1.0)
    assert o.predict(0)[0] == pytest.approx(2 / 3)
    # brute force ridge: argmin (1-t)^2 * 2 + t^2
    ts = np.linspace(0, 1, 100001)
    assert ts[np.argmin(2 * (1 - ts) ** 2 + ts ** 2)] == pytest.approx(2 / 3, abs=1e-5)


def test_vaw_mode_shrinks_by_leverage():
    o = LinearOracle(np.ones((1, 1, 1)), reg=1.0, mode="vaw")
    o.update(0, 0, 1.0)
    o.update(0, 0, 1.0)
    assert o.predict(0)[0] == pytest.approx(2 / 4)


def test_update_rejects_out_of_range():
    o = FiniteClassOracle(const_class(0.0))
    with pytest.raises(ValueError):
        o.update(0, 0, 1.5)
    with pytest.raises(ValueError):
        LinearOracle(None)


def test_matches_reference_recursion(rng):
    tables = rng.uniform(-1, 1, (5, 3, 4))
    stream = [(int(rng.integers(3)), int(rng.integers(4)), float(rng.choice([-1.0, 1.0]))) for _ in range(300)]
    o = FiniteClassOracle(tables, keep_history=True)
    for x, a, y in stream:
        o.update(x, a, y)
    got = np.array([p for p, _ in o.ledger.history]).ravel()
    np.testing.assert_allclose(got, exp_weights_reference(tables, stream, 0.125), atol=1e-12)


def test_ledger_truth_and_monotone(rng):
    tables = rng.uniform(-1, 1, (4, 2, 3))
    o = FiniteClassOracle(tables)
    prev = 0.0
    for _ in range(50):
        x, a = int(rng.integers(2)), int(rng.integers(3))
        truth = tables[1, x, a]
        pred_before = o.predict(x)[a]
        o.update(x, a, float(np.sign(rng.uniform(-1, 1))), truth=truth)
        assert o.ledger.truth[0] - prev == pytest.approx((pred_before - truth) ** 2)
        assert o.ledger.truth[0] >= prev
        prev = o.ledger.truth[0]


def test_inactive_runs_are_frozen():
    o = FiniteClassOracle(const_class(0.0, 1.0), n_runs=2)
    o.update([0, 0], [0, 0], [0.0, 0.0], active=np.array([True, False]))
    assert o.log_weights[1, 0] == o.log_weights[1, 1]
    assert o.ledger.realized[1] == 0.0


def test_regret_of_singleton_is_zero(rng):
    h = rng.uniform(-1, 1, (1, 3, 2))
    o = FiniteClassOracle(h, keep_history=True)
    xs, as_, ys = rng.integers(3, size=50), rng.integers(2, size=50), rng.uniform(-1, 1, 50)
    for x, a, y in zip(xs, as_, ys):
        o.update(x, a, y)
    assert oracle_regret(o.ledger.history, o.best_in_class_error(xs, as_, ys)) == pytest.approx(0.0, abs=1e-12)
    assert oracle_regret([], 3.0) == 0.0


def test_adversarial_alternating_stream_regret():
    worst = -np.inf
    for pattern in ([0.0, 1.0], [1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0, 0.0]):
        o = FiniteClassOracle(const_class(0.0, 1.0, K=1), keep_history=True)
        ys = np.resize(pattern, 400)
        for y in ys:
            o.update(0, 0, y)
        worst = max(worst, oracle_regret(o.ledger.history, o.best_in_class_error(np.zeros(400, int), np.zeros(400, int), ys)))
    assert worst <= 8 * math.log(2)


@given(st.integers(2, 12), st.integers(0, 2**31))
def test_property_weights_on_simplex_and_bound(N, seed):
    rng = np.random.default_rng(seed)
    tables = rng.uniform(-1, 1, (N, 2, 2))
    o = FiniteClassOracle(tables, keep_history=True)
    xs, as_ = rng.integers(2, size=200), rng.integers(2, size=200)
    ys = rng.uniform(-1, 1, 200)
    for x, a, y in zip(xs, as_, ys):
        o.update(x, a, y)
        w = o.weights
        assert abs(w.sum() - 1) < 1e-12 and np.all(o.predict(x) <= 1) and np.all(o.predict(x) >= -1)
    assert oracle_regret(o.ledger.history, o.best_in_class_error(xs, as_, ys)) <= 8 * math.log(N) + 1e-9


def test_configured_U():
    assert configured_U("finite", class_sizes=(8, 4)) == pytest.approx(math.log(8))
    assert configured_U("linear", dim=3, T=100) == pytest.approx(3 * math.log(100))
    assert configured_U("finite", class_sizes=(8,), override=2.5) == 2.5


def test_ledger_zeros():
    led = ErrorLedger.zeros(3)
    led.record(np.array([0.5, 0.0, 1.0]), np.array([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(led.realized, [0.25, 0.0, 4.0])
