"""The Lyapunov-weighted IGW controller.

Many independent runs (one per seed) are advanced in lock-step: all state
arrays carry a leading run axis S. Runs never interact, and every random draw
comes from per-seed streams consumed one value per round, so a run's trace
does not depend on which other seeds share its batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .envs import ProblemInstance
from .igw import igw_solve, sample_from_uniform
from .lyapunov import EXPONENTIAL, QUADRATIC, LyapunovConfig, auto_parameter
from .oracle import DEFAULT_ETA, FiniteClassOracle, LinearOracle

ROUND_WISE = "round"
CBWK = "cbwk"
CBWLC = "cbwlc"
MODES = (ROUND_WISE, CBWK, CBWLC)

STREAMS = ("context", "arm", "reward", "cost", "master")


@dataclass(frozen=True)
class OracleSpec:
    """How to build the per-target learners. ``kind`` is "finite" or "linear".

    finite: ``reward`` is an (N, X, K) table class; ``costs`` a list with one
    (N_i, X, K) class per resource.
    linear: ``reward``/``costs`` are (X, K, d) feature tables.
    """

    kind: str
    reward: np.ndarray
    costs: tuple
    eta: float = DEFAULT_ETA
    reg: float = 1.0
    mode: str = "ridge"

    def build(self, n_runs: int):
        if self.kind == "finite":
            mk = lambda t: FiniteClassOracle(t, self.eta, n_runs)  # noqa: E731
        elif self.kind == "linear":
            mk = lambda t: LinearOracle(t, self.reg, self.mode, n_runs)  # noqa: E731
        else:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        return mk(self.reward), [mk(c) for c in self.costs]

    @classmethod
    def exact(cls, instance: ProblemInstance) -> "OracleSpec":
        """Singleton classes holding the ground truth: predictions equal f*, g*."""
        return cls("finite", instance.f_star[None], tuple(g[None] for g in instance.g_star))

    def default_U(self, T: int) -> float:
        if self.kind == "finite":
            n = max([np.shape(self.reward)[0]] + [np.shape(c)[0] for c in self.costs])
            return math.log(n) if n > 1 else 1.0
        d = max([np.shape(self.reward)[2]] + [np.shape(c)[2] for c in self.costs])
        return d * math.log(max(T, 2))


@dataclass(frozen=True)
class ControllerConfig:
    """Planner settings.

    ``mode`` selects the benchmark regime: "round" (round-wise feasibility),
    "cbwk" (long-term budget, non-negative costs) or "cbwlc" (long-term budget
    with costs shifted by budget/T). ``lyapunov_param=None`` picks the automatic
    parameter for (K, T, U_T) and, in "cbwk" mode, the budget.
    """

    lyapunov_kind: str = QUADRATIC
    lyapunov_param: Optional[float] = None
    U_T: Optional[float] = None
    mode: str = ROUND_WISE
    budget: Optional[float] = None
    record_vectors: bool = False
    chunk: int = 1024

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.lyapunov_kind not in (QUADRATIC, EXPONENTIAL):
            raise ValueError(f"unknown Lyapunov kind {self.lyapunov_kind!r}")
        if self.U_T is not None and self.U_T <= 0:
            raise ValueError("U_T must be positive")


def surrogate(f_hat, g_hat, phi_prime) -> np.ndarray:
    """L(a) = f_hat(a) - sum_i phi'_i * g_hat_i(a).

    Shapes: f_hat (..., K), g_hat (..., m, K), phi_prime (..., m).
    """
    f = np.asarray(f_hat, dtype=float)
    g = np.asarray(g_hat, dtype=float)
    w = np.asarray(phi_prime, dtype=float)
    if g.ndim == f.ndim:
        g = g[..., None, :]
    if w.ndim == f.ndim - 1:
        w = w[..., None]
    if g.shape[-1] != f.shape[-1] or g.shape[-2] != w.shape[-1]:
        raise ValueError(f"shape mismatch: f_hat {f.shape}, g_hat {g.shape}, phi' {w.shape}")
    if np.any(w < 0):
        raise ValueError("multipliers must be non-negative")
    return f - np.einsum("...i,...ik->...k", w, g)


def gamma_schedule(z_sum, phi_prime, K: int, U_T):
    """Returns (gamma_t, z_sum + z_t) with z_t = max(1, sum_i phi'_i^2)."""
    w = np.asarray(phi_prime, dtype=float)
    z = np.maximum(1.0, np.sum(w * w, axis=-1))
    new_sum = np.asarray(z_sum, dtype=float) + z
    gamma = np.sqrt(K / np.asarray(U_T, dtype=float) * new_sum) / (2.0 * z)
    return gamma, new_sum


@dataclass
class RunTrace:
    """Per-round records of a batch of runs; arrays have leading shape (S, T)."""

    seeds: np.ndarray
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray          # (S, T, m) realised, unshifted
    queue: np.ndarray          # (S, T, m) after the round
    phi_prime: np.ndarray      # (S, T, m) pre-round multipliers
    gamma: np.ndarray
    normalizer: np.ndarray
    chosen_surrogate: np.ndarray
    saturated: np.ndarray      # exponential guard hit at this round
    cost_shift: float = 0.0
    lyapunov: Optional[LyapunovConfig] = None
    stop_round: Optional[np.ndarray] = None    # 1-based round of the hard stop, 0 if none
    frozen: Optional[np.ndarray] = None        # (S, T) NULL forced by the hard stop
    oracle_sq_error_realized: Optional[np.ndarray] = None   # (S, 1 + m)
    oracle_sq_error_truth: Optional[np.ndarray] = None
    vectors: dict = field(default_factory=dict)
    epochs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return self.contexts.shape[0]

    @property
    def T(self) -> int:
        return self.contexts.shape[1]

    @property
    def m(self) -> int:
        return self.costs.shape[2]

    def select(self, idx) -> "RunTrace":
        """Sub-batch of runs (``idx`` is an int, slice or index array)."""
        if isinstance(idx, (int, np.integer)):
            idx = [int(idx)]
        out = {}
        for name in ("seeds", "contexts", "actions", "rewards", "costs", "queue", "phi_prime", "gamma",
                     "normalizer", "chosen_surrogate", "saturated", "stop_round", "frozen",
                     "oracle_sq_error_realized", "oracle_sq_error_truth"):
            v = getattr(self, name)
            out[name] = None if v is None else v[idx]
        lyap = self.lyapunov
        if lyap is not None and np.ndim(lyap.param) > 0:
            lyap = LyapunovConfig(lyap.kind, np.asarray(lyap.param)[idx])
        return RunTrace(**out, cost_shift=self.cost_shift, lyapunov=lyap,
                        vectors={k: v[idx] for k, v in self.vectors.items()},
                        epochs={k: v[idx] for k, v in self.epochs.items()}, meta=dict(self.meta))


class _Streams:
    """Per-seed uniform streams, drawn in chunks but consumed one value per round."""

    def __init__(self, seeds: Sequence[int], m: int, chunk: int):
        self.m = m
        self.chunk = max(1, int(chunk))
        self.gens = {}
        for name in STREAMS:
            self.gens[name] = []
        for s in seeds:
            children = np.random.SeedSequence(int(s)).spawn(len(STREAMS))
            for name, child in zip(STREAMS, children):
                self.gens[name].append(np.random.Generator(np.random.PCG64(child)))
        self._buf = {}
        self._pos = self.chunk

    def _refill(self):
        for name in ("context", "arm", "reward"):
            self._buf[name] = np.stack([g.random(self.chunk) for g in self.gens[name]])
        self._buf["cost"] = np.stack([g.random((self.chunk, self.m)) for g in self.gens["cost"]])
        self._pos = 0

    def next(self):
        if self._pos >= self.chunk:
            self._refill()
        i = self._pos
        self._pos += 1
        return (self._buf["context"][:, i], self._buf["arm"][:, i], self._buf["reward"][:, i],
                self._buf["cost"][:, i, :])

    def master(self, s: int) -> float:
        return float(self.gens["master"][s].random())


def _lyapunov_for(cfg: ControllerConfig, K: int, T: int, U, budget: float):
    if cfg.lyapunov_param is not None:
        return np.broadcast_to(float(cfg.lyapunov_param), np.shape(U)).astype(float)
    B = budget if (cfg.mode == CBWK and cfg.lyapunov_kind == EXPONENTIAL) else 0.0
    return np.asarray(auto_parameter(cfg.lyapunov_kind, K, T, U, B).param, dtype=float)


class Controller:
    """Batched controller state for S parallel runs of one instance."""

    def __init__(self, instance: ProblemInstance, config: ControllerConfig, oracles: OracleSpec,
                 T: int, seeds: Sequence[int], budget: Optional[float] = None):
        self.instance = instance
        self.config = config
        self.T = int(T)
        self.seeds = np.asarray(list(seeds), dtype=np.int64)
        self.S = len(self.seeds)
        self.K = instance.K
        self.m = instance.m
        if len(oracles.costs) != self.m:
            raise ValueError(f"oracle spec has {len(oracles.costs)} cost learners, instance has {self.m} resources")
        self.budget = float(instance.budget if budget is None else budget)
        if config.budget is not None:
            self.budget = float(config.budget)
        if config.mode == CBWLC and self.budget > self.T:
            raise ValueError("the shifted-cost reduction needs budget <= T")
        self.cost_shift = self.budget / self.T if (config.mode == CBWLC and self.T > 0) else 0.0
        self.cost_low = -2.0 if config.mode == CBWLC else -1.0
        U = oracles.default_U(self.T) if config.U_T is None else config.U_T
        self.U = np.full(self.S, float(U))
        self.param = _lyapunov_for(config, self.K, max(self.T, 1), self.U, self.budget).copy()
        self.reward_oracle, self.cost_oracles = oracles.build(self.S)
        self.q = np.zeros((self.S, self.m))
        self.z_sum = np.zeros(self.S)
        self.t = 0
        self.streams = _Streams(self.seeds, self.m, config.chunk)
        self._history_actions = np.zeros((self.S, self.T), dtype=np.int64)
        self._history_contexts = np.zeros((self.S, self.T), dtype=np.int64)
        sched = instance.schedule
        self._scripted = None if sched.kind in ("iid", "callback") else sched.generate(self.T)

    @property
    def lyapunov(self) -> LyapunovConfig:
        return LyapunovConfig(self.config.lyapunov_kind, self.param[:, None])

    def reset_state(self, mask):
        """Zero the queue and the gamma schedule of the selected runs (oracles are kept)."""
        self.q[mask] = 0.0
        self.z_sum[mask] = 0.0

    def _contexts(self, u_ctx):
        sched = self.instance.schedule
        if sched.kind == "iid":
            cdf = np.cumsum(sched.probs)
            return np.minimum(np.searchsorted(cdf, u_ctx, side="right"), len(sched.probs) - 1)
        if sched.kind == "callback":
            t = self.t
            return np.array([int(sched.callback(t, self._history_contexts[s, :t], self._history_actions[s, :t]))
                             for s in range(self.S)], dtype=np.int64)
        return np.full(self.S, self._scripted[self.t], dtype=np.int64)

    def step(self, active: Optional[np.ndarray] = None) -> dict:
        """Play one round for every run. Runs with ``active`` False play the NULL arm frozen."""
        if self.t >= self.T:
            raise StopIteration("horizon exhausted")
        inst = self.instance
        S, K = self.S, self.K
        rows = np.arange(S)
        u_ctx, u_arm, u_rew, u_cost = self.streams.next()
        x = self._contexts(u_ctx)
        if np.any((x < 0) | (x >= inst.n_contexts)):
            raise ValueError("context id out of range")

        f_hat = self.reward_oracle.predict(x)
        g_hat = np.stack([o.predict(x) for o in self.cost_oracles], axis=1)  # (S, m, K)
        lyap = self.lyapunov
        w = lyap.phi_prime(self.q)
        saturated = lyap.saturated(self.q).any(axis=1)
        L = surrogate(f_hat, g_hat, w)
        gamma, z_new = gamma_schedule(self.z_sum, w, K, self.U)
        dist = igw_solve(-L, gamma)
        a = sample_from_uniform(dist.probs, u_arm)

        if active is not None:
            a = np.where(active, a, inst.null_arm)
        f = inst.f_star[x, a]
        r = np.where(u_rew < 0.5 * (1.0 + f), 1.0, -1.0)
        c = np.empty((S, self.m))
        for i, law in enumerate(inst.cost_laws):
            gi = inst.g_star[i][x, a]
            c[:, i] = np.where(u_cost[:, i] < gi, 1.0, 0.0) if law == "binary" else \
                np.where(u_cost[:, i] < 0.5 * (1.0 + gi), 1.0, -1.0)
        if inst.null_arm is not None:
            null = a == inst.null_arm
            r = np.where(null, 0.0, r)
            c[null] = 0.0
        shifted = c - self.cost_shift
        if np.any(shifted < self.cost_low - 1e-12) or np.any(shifted > 1.0 + 1e-12):
            raise ValueError("shifted cost outside the admissible range")

        self.reward_oracle.update(x, a, r, truth=f, active=active)
        for i, o in enumerate(self.cost_oracles):
            o.update(x, a, c[:, i], truth=inst.g_star[i][x, a], active=active)
        if active is None:
            self.q = np.maximum(0.0, self.q + shifted)
            self.z_sum = z_new
        else:
            self.q[active] = np.maximum(0.0, self.q[active] + shifted[active])
            self.z_sum[active] = z_new[active]

        self._history_contexts[:, self.t] = x
        self._history_actions[:, self.t] = a
        self.t += 1
        rec = {
            "context": x, "action": a, "reward": r, "costs": c, "queue": self.q.copy(),
            "phi_prime": w, "gamma": gamma, "normalizer": dist.normalizer,
            "chosen_surrogate": L[rows, a], "saturated": saturated,
        }
        if self.config.record_vectors:
            rec.update(surrogate=L, f_hat=f_hat, g_hat=g_hat, probs=dist.probs)
        return rec


def _empty_trace(S, T, m, record_vectors, K):
    tr = RunTrace(
        seeds=np.zeros(S, dtype=np.int64),
        contexts=np.zeros((S, T), dtype=np.int64),
        actions=np.zeros((S, T), dtype=np.int64),
        rewards=np.zeros((S, T)),
        costs=np.zeros((S, T, m)),
        queue=np.zeros((S, T, m)),
        phi_prime=np.zeros((S, T, m)),
        gamma=np.zeros((S, T)),
        normalizer=np.zeros((S, T)),
        chosen_surrogate=np.zeros((S, T)),
        saturated=np.zeros((S, T), dtype=bool),
    )
    if record_vectors:
        tr.vectors = {"surrogate": np.zeros((S, T, K)), "f_hat": np.zeros((S, T, K)),
                      "g_hat": np.zeros((S, T, m, K)), "probs": np.zeros((S, T, K))}
    return tr


def _store(tr: RunTrace, t: int, rec: dict):
    tr.contexts[:, t] = rec["context"]
    tr.actions[:, t] = rec["action"]
    tr.rewards[:, t] = rec["reward"]
    tr.costs[:, t] = rec["costs"]
    tr.queue[:, t] = rec["queue"]
    tr.phi_prime[:, t] = rec["phi_prime"]
    tr.gamma[:, t] = rec["gamma"]
    tr.normalizer[:, t] = rec["normalizer"]
    tr.chosen_surrogate[:, t] = rec["chosen_surrogate"]
    tr.saturated[:, t] = rec["saturated"]
    for k, v in tr.vectors.items():
        v[:, t] = rec[k]


def _finish(tr: RunTrace, ctl: Controller):
    tr.seeds = ctl.seeds.copy()
    tr.cost_shift = ctl.cost_shift
    tr.lyapunov = LyapunovConfig(ctl.config.lyapunov_kind, ctl.param.copy()) if ctl.S else None
    oracles = [ctl.reward_oracle] + ctl.cost_oracles
    tr.oracle_sq_error_realized = np.stack([o.ledger.realized for o in oracles], axis=1)
    tr.oracle_sq_error_truth = np.stack([o.ledger.truth for o in oracles], axis=1)
    tr.meta.update(T=ctl.T, K=ctl.K, m=ctl.m, budget=ctl.budget, mode=ctl.config.mode,
                   U_T=ctl.U.tolist())
    return tr


def _seeds(seed) -> list:
    return [int(seed)] if np.ndim(seed) == 0 else [int(s) for s in seed]


def run(instance: ProblemInstance, config: ControllerConfig, oracles: OracleSpec, T: int, seed) -> RunTrace:
    """Algorithm loop for T rounds. ``seed`` may be one seed or a list (batched runs)."""
    seeds = _seeds(seed)
    ctl = Controller(instance, config, oracles, T, seeds)
    tr = _empty_trace(len(seeds), T, instance.m, config.record_vectors, instance.K)
    for t in range(T):
        _store(tr, t, ctl.step())
    return _finish(tr, ctl)


@dataclass(frozen=True)
class Scaling:
    """Budget reduction for the hard-stopping wrapper."""

    kind: str  # "multiplicative" or "additive"
    value: float

    def reduced(self, B: float, T: int) -> float:
        if self.kind == "multiplicative":
            if self.value <= 0:
                raise ValueError("multiplicative constant must be positive")
            Bp = B / (self.value * math.log(T))
        elif self.kind == "additive":
            Bp = B - self.value
        else:
            raise ValueError(f"unknown scaling {self.kind!r}")
        if not Bp > 0:
            raise ValueError(f"reduced budget B' = {Bp:g} is not positive; the scaling leaves nothing to spend")
        return float(Bp)


def hard_stop_run(instance: ProblemInstance, config: ControllerConfig, oracles: OracleSpec, T: int,
                  B_T: float, scaling: Scaling, seed) -> RunTrace:
    """Run with the reduced budget B' internally and stop on the true budget B_T.

    A run stops at the first round where its realised cumulative cost plus the
    largest possible single cost would exceed B_T; from then on it plays the
    NULL arm with learning and queue dynamics frozen.
    """
    if instance.null_arm is None:
        raise ValueError("hard stopping needs a NULL arm")
    if T >= 2:
        Bp = scaling.reduced(B_T, T)
    else:
        Bp = float(B_T)
    seeds = _seeds(seed)
    ctl = Controller(instance, config, oracles, T, seeds, budget=Bp)
    S = len(seeds)
    tr = _empty_trace(S, T, instance.m, config.record_vectors, instance.K)
    spent = np.zeros((S, instance.m))
    stop = np.zeros(S, dtype=np.int64)
    frozen = np.zeros((S, T), dtype=bool)
    for t in range(T):
        ok = np.all(spent + 1.0 <= B_T, axis=1)
        newly = (~ok) & (stop == 0)
        stop[newly] = t + 1
        frozen[:, t] = ~ok
        rec = ctl.step(None if ok.all() else ok)
        spent += rec["costs"]
        _store(tr, t, rec)
    tr = _finish(tr, ctl)
    tr.stop_round = stop
    tr.frozen = frozen
    tr.meta.update(true_budget=float(B_T), reduced_budget=Bp, scaling=scaling.kind, scaling_value=scaling.value)
    return tr


def ensemble_guesses(T: int) -> list:
    return [float(2 ** k) for k in range(int(math.ceil(math.log2(T))) + 1)]


def ensemble_run(instance: ProblemInstance, config: ControllerConfig, oracles: OracleSpec, T: int, seed,
                 guesses: Optional[Sequence[float]] = None, epoch_length: Optional[int] = None) -> RunTrace:
    """Unknown U_T: an EXP3 master picks one U_T guess per epoch.

    Each epoch restarts the queue and the gamma schedule under the chosen guess;
    the regression oracles keep learning across epochs. The master's loss for an
    epoch is the summed negative surrogate reward of the played arms, scaled to [0, 1].
    """
    if T < 4:
        raise ValueError("ensemble needs T >= 4")
    seeds = _seeds(seed)
    S = len(seeds)
    G = list(ensemble_guesses(T) if guesses is None else guesses)
    E = int(epoch_length) if epoch_length is not None else int(math.ceil(math.sqrt(T)))
    n_epochs = int(math.ceil(T / E))
    eta = math.sqrt(math.log(len(G)) / (n_epochs * len(G))) if len(G) > 1 else 0.0

    ctl = Controller(instance, replace(config, U_T=G[0]), oracles, T, seeds)
    params = np.array([_lyapunov_for(config, instance.K, T, np.array([u]), ctl.budget)[0] for u in G])
    tr = _empty_trace(S, T, instance.m, config.record_vectors, instance.K)
    log_w = np.zeros((S, len(G)))
    chosen = np.zeros((S, n_epochs), dtype=np.int64)
    probs_hist = np.zeros((S, n_epochs, len(G)))
    losses = np.zeros((S, n_epochs))
    phi_max = np.zeros(S)
    t = 0
    for e in range(n_epochs):
        p = np.exp(log_w - log_w.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        j = np.array([sample_from_uniform(p[s], ctl.streams.master(s)) for s in range(S)])
        chosen[:, e] = j
        probs_hist[:, e] = p
        ctl.reset_state(np.ones(S, dtype=bool))
        ctl.U = np.asarray(G, dtype=float)[j]
        ctl.param = params[j].copy()
        acc = np.zeros(S)
        n = 0
        while n < E and t < T:
            rec = ctl.step()
            phi_max = np.maximum(phi_max, rec["phi_prime"].sum(axis=1))
            acc -= rec["chosen_surrogate"]
            _store(tr, t, rec)
            t += 1
            n += 1
        loss = np.clip((acc / (n * (1.0 + phi_max)) + 1.0) / 2.0, 0.0, 1.0)
        losses[:, e] = loss
        if eta > 0:
            rows = np.arange(S)
            log_w[rows, j] -= eta * loss / p[rows, j]
    tr = _finish(tr, ctl)
    tr.epochs = {"chosen": chosen, "probs": probs_hist, "loss": losses}
    tr.meta.update(guesses=G, epoch_length=E, n_epochs=n_epochs, master_rate=eta)
    return tr
