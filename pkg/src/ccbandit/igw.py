"""Inverse Gap Weighting (IGW) exploration distribution.

Every function accepts either a single loss vector of shape ``(K,)`` or a batch
of independent rows of shape ``(S, K)``; rows never interact, so a batch of
``S`` runs gives bit-identical results to ``S`` separate calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

TOL = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class IgwDistribution:
    probs: np.ndarray
    normalizer: np.ndarray | float
    gamma: np.ndarray | float

    @property
    def greedy_arm(self):
        """Lowest-index arm with maximal probability (the loss minimiser)."""
        return np.argmax(self.probs, axis=-1)


def _as_rows(losses, gamma):
    v = np.asarray(losses, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.ndim != 2 or v.shape[1] < 2:
        raise ValueError(f"loss vector must have K >= 2 entries, got shape {np.shape(losses)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("loss vector contains non-finite entries")
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (v.shape[0],)).copy()
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise ValueError("gamma must be finite and non-negative")
    return v, g, single


@njit(cache=True)
def _normalizer(c, tol, max_iter):
    """Solve sum_a 1/(lam + c_a) = 1 for lam in [1, K], row-wise, by bisection."""
    S, K = c.shape
    lam = np.empty(S)
    for s in range(S):
        h_lo = -1.0
        h_hi = -1.0
        for a in range(K):
            h_lo += 1.0 / (1.0 + c[s, a])
            h_hi += 1.0 / (K + c[s, a])
        # h is strictly decreasing with h(1) >= 0 >= h(K)
        if h_lo <= tol:
            lam[s] = 1.0
            continue
        if h_hi >= -tol:
            lam[s] = float(K)
            continue
        lo = 1.0
        hi = float(K)
        mid = 0.5 * (lo + hi)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            h = -1.0
            for a in range(K):
                h += 1.0 / (mid + c[s, a])
            if abs(h) <= tol:
                break
            if h > 0.0:
                lo = mid
            else:
                hi = mid
        lam[s] = mid
    return lam


def igw_solve(losses, gamma) -> IgwDistribution:
    """IGW distribution over arms for a loss vector (smaller is better).

    p(a) = 1 / (lam + 2 * gamma * (loss(a) - min_b loss(b))), with lam in [1, K]
    chosen so the probabilities sum to one.
    """
    v, g, single = _as_rows(losses, gamma)
    S, K = v.shape
    gaps = v - v.min(axis=1, keepdims=True)
    c = 2.0 * g[:, None] * gaps

    lam = np.full(S, float(K))
    nonuniform = (g > 0) & np.any(c > 0, axis=1)
    if nonuniform.any():
        lam[nonuniform] = _normalizer(np.ascontiguousarray(c[nonuniform]), TOL, MAX_ITER)
    probs = 1.0 / (lam[:, None] + c)
    probs[~nonuniform] = 1.0 / K

    if single:
        return IgwDistribution(probs[0], float(lam[0]), float(g[0]))
    return IgwDistribution(probs, lam, g)


def sample_from_uniform(probs, u) -> np.ndarray | int:
    """Inverse-CDF draw: first arm whose cumulative probability exceeds ``u``."""
    p = np.atleast_2d(probs)
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    cdf = np.cumsum(p, axis=1)
    idx = np.sum(cdf <= uu[:, None], axis=1)
    idx = np.minimum(idx, p.shape[1] - 1)
    if np.ndim(probs) == 1:
        return int(idx[0])
    return idx


def igw_sample(dist: IgwDistribution, rng: np.random.Generator):
    """Draw one arm per row of ``dist`` using ``rng``."""
    n = 1 if dist.probs.ndim == 1 else dist.probs.shape[0]
    u = rng.random(n)
    return sample_from_uniform(dist.probs, u if n > 1 else u[0])


def lemma1_gap(losses_hat, losses_true, comparator, gamma: float) -> tuple[float, float]:
    """Both sides of the SquareCB per-round inequality.

    lhs = <v, p> - <v, mu> and rhs = K/(2 gamma) + gamma * E_{a~p}(v(a) - v_hat(a))^2
    with p = IGW_gamma(v_hat); the inequality lhs <= rhs holds for every v and mu.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    v_hat = np.asarray(losses_hat, dtype=float)
    v = np.asarray(losses_true, dtype=float)
    mu = np.asarray(comparator, dtype=float)
    if v.shape != v_hat.shape or mu.shape != v_hat.shape:
        raise ValueError("losses and comparator must have the same length")
    if np.any(mu < -1e-12) or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("comparator is not a probability vector")
    p = igw_solve(v_hat, gamma).probs
    K = v.shape[0]
    lhs = float(v @ p - v @ mu)
    rhs = float(K / (2.0 * gamma) + gamma * np.sum(p * (v - v_hat) ** 2))
    return lhs, rhs
