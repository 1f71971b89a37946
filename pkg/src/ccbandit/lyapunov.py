"""Lyapunov potentials and the virtual-queue (Lindley) recursion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXP_CAP = 500.0
QUADRATIC = "quadratic"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class LyapunovConfig:
    """Convex potential Phi with its parameter.

    ``kind == "quadratic"``: Phi(x) = x^2 / V with ``param = V``.
    ``kind == "exponential"``: Phi(x) = exp(rate * x) with ``param = rate``.

    ``param`` may be an array with one entry per parallel run.
    """

    kind: str
    param: float | np.ndarray

    def __post_init__(self):
        if self.kind not in (QUADRATIC, EXPONENTIAL):
            raise ValueError(f"unknown Lyapunov kind {self.kind!r}")
        p = np.asarray(self.param, dtype=float)
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError(f"Lyapunov parameter must be positive, got {self.param}")

    @classmethod
    def quadratic(cls, V: float) -> "LyapunovConfig":
        return cls(QUADRATIC, V)

    @classmethod
    def exponential(cls, rate: float) -> "LyapunovConfig":
        return cls(EXPONENTIAL, rate)

    def _exp(self, x):
        z = np.asarray(self.param) * x
        return np.exp(np.minimum(z, EXP_CAP))

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == QUADRATIC:
            return x * x / self.param
        return self._exp(x)

    def phi_prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == QUADRATIC:
            return 2.0 * x / self.param
        return np.asarray(self.param) * self._exp(x)

    def phi_double_prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == QUADRATIC:
            return np.broadcast_to(2.0 / np.asarray(self.param), np.broadcast_shapes(x.shape, np.shape(self.param))).copy()
        r = np.asarray(self.param)
        return r * r * self._exp(x)

    def saturated(self, x):
        """True where the exponential guard clipped the exponent."""
        if self.kind == QUADRATIC:
            return np.zeros(np.shape(x), dtype=bool)
        return np.asarray(self.param) * np.asarray(x, dtype=float) > EXP_CAP

    def select(self, mask) -> "LyapunovConfig":
        """Sub-config for the runs selected by ``mask`` (array params only)."""
        if np.ndim(self.param) == 0:
            return self
        return LyapunovConfig(self.kind, np.asarray(self.param)[mask])


def phi_eval(cfg: LyapunovConfig, x):
    """(Phi(x), Phi'(x), Phi''(x)) for x >= 0."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("Lyapunov potentials are evaluated on x >= 0")
    return cfg.phi(x), cfg.phi_prime(x), cfg.phi_double_prime(x)


def auto_parameter(kind: str, K: int, T: int, U_T: float, B_T: float = 0.0) -> LyapunovConfig:
    """Parameter choices that give the headline regret/CCV rates.

    quadratic:   V = sqrt(K T U_T)
    exponential: rate = 1 / (8 sqrt(K U_T T) + 2 B_T)   (B_T = 0 for round-wise benchmarks)
    """
    if K < 2 or T < 1:
        raise ValueError("need K >= 2 and T >= 1")
    U = np.asarray(U_T, dtype=float)
    if np.any(U <= 0):
        raise ValueError("U_T must be positive")
    root = np.sqrt(K * T * U)
    if kind == QUADRATIC:
        return LyapunovConfig(QUADRATIC, float(root) if root.ndim == 0 else root)
    if kind == EXPONENTIAL:
        if B_T < 0:
            raise ValueError("budget must be non-negative")
        rate = 1.0 / (8.0 * root + 2.0 * B_T)
        return LyapunovConfig(EXPONENTIAL, float(rate) if rate.ndim == 0 else rate)
    raise ValueError(f"unknown Lyapunov kind {kind!r}")


@dataclass(frozen=True)
class QueueState:
    """Virtual queues, one column per resource; rows are parallel runs."""

    q: np.ndarray
    round: int = 0

    @classmethod
    def zeros(cls, m: int = 1, n_runs: int | None = None) -> "QueueState":
        shape = (m,) if n_runs is None else (n_runs, m)
        return cls(np.zeros(shape))


def queue_update(state: QueueState, costs, low: float = -1.0, high: float = 1.0) -> QueueState:
    """Q <- max(0, Q + cost), componentwise."""
    c = np.asarray(costs, dtype=float)
    if c.shape != state.q.shape:
        c = np.broadcast_to(c, state.q.shape)
    if np.any(c < low - 1e-12) or np.any(c > high + 1e-12):
        raise ValueError(f"cost outside [{low}, {high}]")
    return QueueState(np.maximum(0.0, state.q + c), state.round + 1)


def queue_path(costs) -> np.ndarray:
    """Queue value after every step of a scalar cost stream, starting from 0."""
    q = 0.0
    out = np.empty(len(costs))
    for i, c in enumerate(costs):
        q = max(0.0, q + c)
        out[i] = q
    return out
