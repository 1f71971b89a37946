"""Online squared-loss regression oracles.

Both oracles keep one independent learner per parallel run (leading axis S).
``predict`` returns per-arm estimates for the current context of every run and
``update`` feeds back the realised value of the pulled arm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ETA = 0.125


def _check_values(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > 1.0 + 1e-12):
        raise ValueError("oracle targets must lie in [-1, 1]")
    return y


@dataclass
class ErrorLedger:
    """Cumulative squared error of the pre-update predictions.

    ``realized`` is measured against the observed values and ``truth`` against
    the ground-truth means when the caller supplies them.
    """

    realized: np.ndarray
    truth: np.ndarray
    keep_history: bool = False
    history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, n_runs: int = 1, keep_history: bool = False) -> "ErrorLedger":
        return cls(np.zeros(n_runs), np.zeros(n_runs), keep_history)

    def record(self, pred, realized, truth=None, active=None):
        e_real = (np.asarray(pred) - np.asarray(realized)) ** 2
        e_true = np.zeros_like(e_real) if truth is None else (np.asarray(pred) - np.asarray(truth)) ** 2
        if active is not None:
            e_real = np.where(active, e_real, 0.0)
            e_true = np.where(active, e_true, 0.0)
        self.realized = self.realized + e_real
        self.truth = self.truth + e_true
        if self.keep_history:
            self.history.append((np.array(pred, dtype=float), np.array(realized, dtype=float)))


class _BatchedOracle:
    n_runs: int
    ledger: ErrorLedger

    def _rows(self, contexts):
        c = np.atleast_1d(np.asarray(contexts, dtype=np.int64))
        if c.shape != (self.n_runs,):
            if c.shape == (1,):
                c = np.broadcast_to(c, (self.n_runs,))
            else:
                raise ValueError(f"expected {self.n_runs} contexts, got shape {c.shape}")
        return c

    _cache = None

    def _predict_cached(self, c):
        # the controller predicts and then updates on the same contexts
        if self._cache is not None and np.array_equal(self._cache[0], c):
            return self._cache[1]
        out = self._predict(c)
        self._cache = (c.copy(), out)
        return out

    def predict(self, contexts) -> np.ndarray:
        out = self._predict_cached(self._rows(contexts))
        return out[0] if np.ndim(contexts) == 0 else out.copy()

    def update(self, contexts, arms, values, truth=None, active=None):
        """Learn from (context, arm, value); runs with ``active`` False are left untouched."""
        c = self._rows(contexts)
        a = np.broadcast_to(np.atleast_1d(np.asarray(arms, dtype=np.int64)), c.shape)
        y = np.broadcast_to(np.atleast_1d(_check_values(values)), c.shape)
        pred = self._predict_cached(c)[np.arange(self.n_runs), a]
        self.ledger.record(pred, y, None if truth is None else np.broadcast_to(truth, c.shape), active)
        mask = np.ones(self.n_runs, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        if mask.any():
            self._learn(c, a, y, mask)
            self._cache = None
        return float(pred[0]) if np.ndim(contexts) == 0 else pred


class FiniteClassOracle(_BatchedOracle):
    """Exponential weights over a finite table class, predicting the weighted mean.

    ``tables`` has shape (N, X, K) with entries in [-1, 1].
    """

    def __init__(self, tables, eta: float = DEFAULT_ETA, n_runs: int = 1, keep_history: bool = False):
        t = np.asarray(tables, dtype=float)
        if t.ndim != 3 or t.shape[0] < 1:
            raise ValueError("hypothesis tables must have shape (N, contexts, K)")
        if np.any(np.abs(t) > 1.0):
            raise ValueError("hypothesis values must lie in [-1, 1]")
        if eta <= 0:
            raise ValueError("learning rate must be positive")
        self.tables = t
        self.eta = float(eta)
        self.n_runs = int(n_runs)
        self.log_weights = np.zeros((self.n_runs, t.shape[0]))
        self.ledger = ErrorLedger.zeros(self.n_runs, keep_history)

    @property
    def size(self) -> int:
        return self.tables.shape[0]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max(axis=1, keepdims=True))
        return w / w.sum(axis=1, keepdims=True)

    def _predict(self, c):
        h = self.tables[:, c, :]  # (N, S, K)
        p = np.einsum("sn,nsk->sk", self.weights, h)
        return np.clip(p, -1.0, 1.0)

    def _learn(self, c, a, y, mask):
        h = self.tables[:, c, a].T  # (S, N)
        loss = (h - y[:, None]) ** 2
        self.log_weights[mask] -= self.eta * loss[mask]
        # keep log-weights bounded; normalization is shift invariant
        self.log_weights[mask] -= self.log_weights[mask].max(axis=1, keepdims=True)

    def best_in_class_error(self, contexts, arms, values) -> float:
        """Smallest cumulative squared error of a fixed hypothesis on one stream."""
        h = self.tables[:, np.asarray(contexts), np.asarray(arms)]
        return float(np.min(np.sum((h - np.asarray(values)[None, :]) ** 2, axis=1)))


class LinearOracle(_BatchedOracle):
    """Online ridge regression on a fixed feature table of shape (X, K, d).

    ``mode="ridge"`` predicts with the current ridge estimate. ``mode="vaw"``
    uses the Vovk-Azoury-Warmuth forecaster, which folds the query feature into
    the second-moment matrix before predicting. Predictions are clipped to [-1, 1].
    """

    def __init__(self, features, reg: float = 1.0, mode: str = "ridge", n_runs: int = 1,
                 keep_history: bool = False):
        if features is None:
            raise ValueError("linear oracle needs a feature table")
        phi = np.asarray(features, dtype=float)
        if phi.ndim != 3:
            raise ValueError("feature table must have shape (contexts, K, d)")
        if reg <= 0:
            raise ValueError("regularizer must be positive")
        if mode not in ("ridge", "vaw"):
            raise ValueError(f"unknown linear oracle mode {mode!r}")
        self.features = phi
        self.reg = float(reg)
        self.mode = mode
        self.n_runs = int(n_runs)
        d = phi.shape[2]
        self.a_inv = np.broadcast_to(np.eye(d) / self.reg, (self.n_runs, d, d)).copy()
        self.b = np.zeros((self.n_runs, d))
        self.ledger = ErrorLedger.zeros(self.n_runs, keep_history)

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def theta(self) -> np.ndarray:
        return np.einsum("sij,sj->si", self.a_inv, self.b)

    def _predict(self, c):
        phi = self.features[c]  # (S, K, d)
        raw = np.einsum("skd,sd->sk", phi, self.theta)
        if self.mode == "vaw":
            lev = np.einsum("skd,sde,ske->sk", phi, self.a_inv, phi)
            raw = raw / (1.0 + lev)
        return np.clip(raw, -1.0, 1.0)

    def _learn(self, c, a, y, mask):
        phi = self.features[c, a]  # (S, d)
        u = np.einsum("sij,sj->si", self.a_inv, phi)
        denom = 1.0 + np.einsum("si,si->s", phi, u)
        upd = np.einsum("si,sj->sij", u, u) / denom[:, None, None]
        self.a_inv[mask] -= upd[mask]
        self.b[mask] += (y[:, None] * phi)[mask]

    def best_in_class_error(self, contexts, arms, values) -> float:
        """Cumulative squared error of the best fixed linear predictor (least squares)."""
        X = self.features[np.asarray(contexts), np.asarray(arms)]
        y = np.asarray(values, dtype=float)
        if len(y) == 0:
            return 0.0
        theta, *_ = np.linalg.lstsq(X, y, rcond=None)
        return float(np.sum((X @ theta - y) ** 2))


def oracle_regret(oracle_trace, best_in_class_sq_error: float) -> float:
    """Cumulative squared error of the (prediction, realized) trace minus the comparator's."""
    pairs = list(oracle_trace)
    if not pairs:
        return 0.0
    p, y = (np.asarray(v, dtype=float) for v in zip(*pairs))
    return float(np.sum((p - y) ** 2) - best_in_class_sq_error)


def configured_U(kind: str, *, class_sizes=(), dim: int = 0, T: int = 1, override: float | None = None) -> float:
    """U_T handed to the planner: ln max|class| (finite), d ln T (linear), or an override."""
    if override is not None:
        if override <= 0:
            raise ValueError("U_T override must be positive")
        return float(override)
    if kind == "finite":
        n = max(class_sizes)
        return math.log(n) if n > 1 else 1.0
    if kind == "linear":
        return dim * math.log(max(T, 2))
    raise ValueError(f"unknown oracle kind {kind!r}")


def make_oracle(spec: dict, n_runs: int = 1):
    """Build an oracle from a JSON-style spec ``{"kind": "finite"|"linear", ...}``."""
    kind = spec["kind"]
    if kind == "finite":
        return FiniteClassOracle(np.asarray(spec["tables"], dtype=float), spec.get("eta", DEFAULT_ETA), n_runs)
    if kind == "linear":
        return LinearOracle(np.asarray(spec["features"], dtype=float), spec.get("reg", 1.0),
                            spec.get("mode", "ridge"), n_runs)
    raise ValueError(f"unknown oracle kind {kind!r}")
