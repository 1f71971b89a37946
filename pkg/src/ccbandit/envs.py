"""Problem instances: ground-truth tables, context schedules and outcome laws.

Rewards are realised on {-1, +1} with mean f*(x, a). Each cost channel is
either ``"binary"`` ({0, 1} with mean g*, used for knapsack-style resources)
or ``"signed"`` ({-1, +1} with mean g*). The NULL arm, when present, yields
(0, 0) surely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

IN_EXPECTATION = "in_expectation"
SLATER = "slater"
ALMOST_SURE = "almost_sure"
LONG_TERM = "long_term"
KINDS = (IN_EXPECTATION, SLATER, ALMOST_SURE, LONG_TERM)

BINARY = "binary"
SIGNED = "signed"


@dataclass(frozen=True)
class Feasibility:
    kind: str = IN_EXPECTATION
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feasibility tag {self.kind!r}")


@dataclass(frozen=True)
class ContextSchedule:
    """How contexts arrive.

    iid:      ``probs`` over context ids, one draw per round.
    scripted: explicit ``sequence`` (length >= T).
    cyclic:   ``sequence`` repeated for as long as needed.
    phased:   ``contexts[p]`` is shown for ``block_length`` rounds in phase p; with
              ``block_length=None`` the horizon is split into equal phases.
    callback: ``callback(t, past_contexts, past_actions)`` returns the context of
              round t (0-based) from the run's history (adaptive adversary hook).
    """

    kind: str
    probs: Optional[tuple] = None
    sequence: Optional[tuple] = None
    contexts: Optional[tuple] = None
    block_length: Optional[int] = None
    callback: Optional[Callable] = field(default=None, compare=False)

    @classmethod
    def iid(cls, probs) -> "ContextSchedule":
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("IID context distribution must lie on the simplex")
        return cls("iid", probs=tuple(float(x) for x in p))

    @classmethod
    def scripted(cls, sequence) -> "ContextSchedule":
        return cls("scripted", sequence=tuple(int(x) for x in sequence))

    @classmethod
    def cyclic(cls, pattern) -> "ContextSchedule":
        if len(pattern) == 0:
            raise ValueError("cyclic pattern must be non-empty")
        return cls("cyclic", sequence=tuple(int(x) for x in pattern))

    @classmethod
    def phased(cls, contexts, block_length: Optional[int] = None) -> "ContextSchedule":
        return cls("phased", contexts=tuple(int(x) for x in contexts), block_length=block_length)

    @classmethod
    def adaptive(cls, callback: Callable) -> "ContextSchedule":
        return cls("callback", callback=callback)

    @property
    def is_adaptive(self) -> bool:
        return self.kind == "callback"

    def generate(self, T: int, u: Optional[np.ndarray] = None) -> np.ndarray:
        """Context ids for rounds 1..T. ``u`` holds uniforms for the IID kind."""
        if self.kind == "iid":
            if u is None:
                raise ValueError("IID schedule needs uniforms")
            cdf = np.cumsum(self.probs)
            idx = np.searchsorted(cdf, np.asarray(u)[..., :T], side="right")
            return np.minimum(idx, len(self.probs) - 1)
        if self.kind == "scripted":
            if len(self.sequence) < T:
                raise ValueError(f"scripted schedule has {len(self.sequence)} rounds, need {T}")
            return np.asarray(self.sequence[:T], dtype=np.int64)
        if self.kind == "cyclic":
            reps = -(-T // len(self.sequence))
            return np.tile(np.asarray(self.sequence, dtype=np.int64), reps)[:T]
        if self.kind == "phased":
            P = len(self.contexts)
            block = self.block_length if self.block_length is not None else -(-T // P)
            if P * block < T:
                raise ValueError(f"phased schedule covers {P * block} rounds, need {T}")
            return np.repeat(np.asarray(self.contexts, dtype=np.int64), block)[:T]
        raise ValueError("adaptive schedules are generated round by round")

    def expected_counts(self, T: int, n_contexts: int) -> np.ndarray:
        """N_T(x): script counts for deterministic kinds, T * p(x) for IID."""
        if self.kind == "iid":
            return T * np.asarray(self.probs, dtype=float)
        if self.kind == "callback":
            raise ValueError("context counts of an adaptive schedule are not known offline")
        return np.bincount(self.generate(T), minlength=n_contexts).astype(float)

    def to_json(self) -> dict:
        if self.kind == "iid":
            return {"kind": "iid", "probs": list(self.probs)}
        if self.kind in ("scripted", "cyclic"):
            return {"kind": self.kind, "sequence": list(self.sequence)}
        if self.kind == "phased":
            return {"kind": "phased", "contexts": list(self.contexts), "block_length": self.block_length}
        raise ValueError("adaptive schedules are not serialisable")

    @classmethod
    def from_json(cls, d: dict) -> "ContextSchedule":
        kind = d["kind"]
        if kind == "iid":
            return cls.iid(d["probs"])
        if kind == "scripted":
            return cls.scripted(d["sequence"])
        if kind == "cyclic":
            return cls.cyclic(d["sequence"])
        if kind == "phased":
            return cls.phased(d["contexts"], d.get("block_length"))
        raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class ProblemInstance:
    """Ground truth of a constrained contextual bandit problem.

    ``f_star`` has shape (X, K); ``g_star`` has shape (m, X, K).
    """

    f_star: np.ndarray
    g_star: np.ndarray
    schedule: ContextSchedule
    cost_laws: tuple = (BINARY,)
    null_arm: Optional[int] = None
    budget: float = 0.0
    tag: Feasibility = Feasibility()
    safe_arms: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        f = np.asarray(self.f_star, dtype=float)
        g = np.asarray(self.g_star, dtype=float)
        if g.ndim == 2:
            g = g[None]
        object.__setattr__(self, "f_star", f)
        object.__setattr__(self, "g_star", g)
        if isinstance(self.cost_laws, str):
            object.__setattr__(self, "cost_laws", (self.cost_laws,) * g.shape[0])
        self.validate()

    @property
    def n_contexts(self) -> int:
        return self.f_star.shape[0]

    @property
    def K(self) -> int:
        return self.f_star.shape[1]

    @property
    def m(self) -> int:
        return self.g_star.shape[0]

    def validate(self):
        f, g = self.f_star, self.g_star
        if f.ndim != 2 or f.shape[1] < 2:
            raise ValueError("f_star must be a (contexts, K>=2) table")
        if g.shape[1:] != f.shape:
            raise ValueError(f"g_star shape {g.shape} does not match f_star {f.shape}")
        if len(self.cost_laws) != g.shape[0]:
            raise ValueError("one cost law per resource required")
        if np.any(np.abs(f) > 1) or np.any(np.abs(g) > 1):
            raise ValueError("ground-truth tables must lie in [-1, 1]")
        for i, law in enumerate(self.cost_laws):
            if law not in (BINARY, SIGNED):
                raise ValueError(f"unknown cost law {law!r}")
            if law == BINARY and np.any(g[i] < 0):
                raise ValueError(f"binary cost channel {i} has negative means")
        if self.null_arm is not None:
            a = self.null_arm
            if not 0 <= a < self.K:
                raise ValueError("NULL arm index out of range")
            if np.any(f[:, a] != 0) or np.any(g[:, :, a] != 0):
                raise ValueError("NULL arm must have zero reward and zero cost")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.tag.kind == ALMOST_SURE:
            safe = self.surely_safe_mask()
            if self.safe_arms is not None:
                for x, arms in enumerate(self.safe_arms):
                    for a in arms:
                        if not safe[x, a]:
                            raise ValueError(f"designated arm {a} in context {x} is not surely cost-free")
            if not np.all(safe.any(axis=1)):
                raise ValueError("almost-sure instance needs a surely non-positive-cost arm in every context")

    def surely_safe_mask(self) -> np.ndarray:
        """(X, K) mask of arms whose realised cost is <= 0 on every draw."""
        safe = np.ones((self.n_contexts, self.K), dtype=bool)
        for i, law in enumerate(self.cost_laws):
            lowest = 0.0 if law == BINARY else -1.0
            safe &= self.g_star[i] <= lowest
        if self.null_arm is not None:
            safe[:, self.null_arm] = True
        if self.safe_arms is not None:
            designated = np.zeros_like(safe)
            for x, arms in enumerate(self.safe_arms):
                designated[x, list(arms)] = True
            safe &= designated
        return safe

    def with_schedule(self, schedule: ContextSchedule) -> "ProblemInstance":
        return replace(self, schedule=schedule)

    def with_budget(self, budget: float) -> "ProblemInstance":
        return replace(self, budget=float(budget))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "contexts": self.n_contexts,
            "K": self.K,
            "f_star": self.f_star.tolist(),
            "g_star": self.g_star.tolist(),
            "cost_laws": list(self.cost_laws),
            "null_arm": self.null_arm,
            "schedule": self.schedule.to_json(),
            "budget": self.budget,
            "tag": {"kind": self.tag.kind, "epsilon": self.tag.epsilon},
            "safe_arms": None if self.safe_arms is None else [list(a) for a in self.safe_arms],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProblemInstance":
        f = np.asarray(d["f_star"], dtype=float)
        if f.shape != (d.get("contexts", f.shape[0]), d.get("K", f.shape[1])):
            raise ValueError(f"f_star shape {f.shape} disagrees with contexts/K")
        tag = d.get("tag") or {}
        safe = d.get("safe_arms")
        return cls(
            f_star=f,
            g_star=np.asarray(d["g_star"], dtype=float),
            schedule=ContextSchedule.from_json(d["schedule"]),
            cost_laws=tuple(d["cost_laws"]) if isinstance(d.get("cost_laws"), list) else d.get("cost_laws", BINARY),
            null_arm=d.get("null_arm"),
            budget=float(d.get("budget", 0.0)),
            tag=Feasibility(tag.get("kind", IN_EXPECTATION), float(tag.get("epsilon", 0.0))),
            safe_arms=None if safe is None else tuple(tuple(a) for a in safe),
            name=d.get("name", ""),
        )


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        return ProblemInstance.from_json(json.load(fh))


def save_instance(instance: ProblemInstance, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance.to_json(), indent=2) + "\n")
    return path


def realize_from_uniforms(instance: ProblemInstance, contexts, arms, u_reward, u_costs):
    """Outcomes for (context, arm) pairs given pre-drawn uniforms.

    ``u_costs`` has a trailing axis of length m. Returns (reward, costs).
    """
    x = np.asarray(contexts)
    a = np.asarray(arms)
    f = instance.f_star[x, a]
    reward = np.where(np.asarray(u_reward) < 0.5 * (1.0 + f), 1.0, -1.0)
    uc = np.asarray(u_costs)
    costs = np.empty(np.shape(x) + (instance.m,))
    for i, law in enumerate(instance.cost_laws):
        g = instance.g_star[i][x, a]
        if law == BINARY:
            costs[..., i] = np.where(uc[..., i] < g, 1.0, 0.0)
        else:
            costs[..., i] = np.where(uc[..., i] < 0.5 * (1.0 + g), 1.0, -1.0)
    if instance.null_arm is not None:
        is_null = a == instance.null_arm
        reward = np.where(is_null, 0.0, reward)
        costs = np.where(np.asarray(is_null)[..., None], 0.0, costs)
    return reward, costs


def realize(instance: ProblemInstance, context: int, arm: int, rng: np.random.Generator):
    """One draw of (reward, costs[m]) for a single (context, arm) pair."""
    u = rng.random(1 + instance.m)
    r, c = realize_from_uniforms(instance, context, arm, u[0], u[1:])
    return float(r), c


def make_lower_bound_instance(T: int, B_T: float, tau: int) -> ProblemInstance:
    """Phased two-arm instance on which budget-respecting policies lose a log factor.

    Phase l (length B_T) shows context l. Arm 0 is the NULL arm; arm 1 costs 1
    surely and has mean reward l * B_T / T in phase l <= tau and 0 afterwards.
    """
    if B_T <= 0 or B_T > T:
        raise ValueError("lower-bound instance needs 0 < B_T <= T")
    L = int(T // B_T)
    if not 1 <= tau <= L:
        raise ValueError(f"tau must lie in [1, {L}]")
    eps = B_T / T
    f = np.zeros((L, 2))
    f[:tau, 1] = np.arange(1, tau + 1) * eps
    g = np.zeros((1, L, 2))
    g[0, :, 1] = 1.0
    block = int(B_T)
    seq = np.repeat(np.arange(L), block)
    seq = np.concatenate([seq, np.full(max(0, T - len(seq)), L - 1)])[:T]
    return ProblemInstance(
        f_star=f,
        g_star=g,
        schedule=ContextSchedule.scripted(seq),
        cost_laws=(BINARY,),
        null_arm=0,
        budget=float(B_T),
        tag=Feasibility(LONG_TERM),
        name=f"lower_bound_T{T}_B{B_T:g}_tau{tau}",
    )


def lower_bound_class(T: int, B_T: float) -> np.ndarray:
    """Reward tables f_1..f_L of the lower-bound family, shape (L, L, 2)."""
    L = int(T // B_T)
    return np.stack([make_lower_bound_instance(T, B_T, tau).f_star for tau in range(1, L + 1)])


def slater_certificate(instance: ProblemInstance, epsilon: float) -> np.ndarray:
    """Per-context arm with g*(x, a) <= -epsilon on every resource; raises if none."""
    ok = np.all(instance.g_star <= -epsilon + 1e-12, axis=0)
    if not np.all(ok.any(axis=1)):
        bad = int(np.flatnonzero(~ok.any(axis=1))[0])
        raise ValueError(f"context {bad} has no arm with expected cost <= -{epsilon}")
    return np.argmax(ok, axis=1)


def make_slater_instance(base: ProblemInstance, epsilon: float, planted_arm: Optional[int] = None) -> ProblemInstance:
    """Copy of ``base`` that satisfies Slater's condition with slack ``epsilon``.

    Contexts that already have an arm with g* <= -epsilon are left alone; in the
    others the cost of ``planted_arm`` (default: the non-NULL arm of least cost)
    is lowered to -epsilon.
    """
    if not 0 < epsilon < 1:
        raise ValueError("Slater slack must lie in (0, 1)")
    g = base.g_star.copy()
    ok = np.all(g <= -epsilon + 1e-12, axis=0).any(axis=1)
    if not ok.all():
        if any(law == BINARY for law in base.cost_laws):
            raise ValueError("binary cost channels cannot carry negative costs; no plantable arm")
        candidates = [a for a in range(base.K) if a != base.null_arm]
        if planted_arm is not None and planted_arm not in candidates:
            raise ValueError(f"arm {planted_arm} cannot be planted")
        for x in np.flatnonzero(~ok):
            a = planted_arm
            if a is None:
                a = min(candidates, key=lambda b: (g[:, x, b].max(), b))
            g[:, x, a] = np.minimum(g[:, x, a], -epsilon)
    inst = replace(base, g_star=g, tag=Feasibility(SLATER, float(epsilon)))
    slater_certificate(inst, epsilon)
    return inst


def random_instance(
    rng: np.random.Generator,
    n_contexts: int,
    K: int,
    m: int = 1,
    cost_law: str = BINARY,
    null_arm: Optional[int] = 0,
    schedule: Optional[ContextSchedule] = None,
    budget: float = 0.0,
    tag: Feasibility = Feasibility(LONG_TERM),
) -> ProblemInstance:
    """Uniformly random ground truth, used by property tests and benchmarks."""
    f = rng.uniform(-1, 1, (n_contexts, K))
    lo = 0.0 if cost_law == BINARY else -1.0
    g = rng.uniform(lo, 1, (m, n_contexts, K))
    if null_arm is not None:
        f[:, null_arm] = 0.0
        g[:, :, null_arm] = 0.0
    if schedule is None:
        schedule = ContextSchedule.iid(np.full(n_contexts, 1.0 / n_contexts))
    return ProblemInstance(f, g, schedule, (cost_law,) * m, null_arm, budget, tag)


def finite_class_around(truth: np.ndarray, size: int, spread: float, rng: np.random.Generator,
                        low: float = -1.0, high: float = 1.0, keep_zero_arm: Optional[int] = None) -> np.ndarray:
    """Finite hypothesis class of ``size`` tables containing ``truth``.

    The other members are the truth plus uniform perturbations of half-width
    ``spread``, clipped to [low, high]. The truth sits at a random position.
    """
    truth = np.asarray(truth, dtype=float)
    tables = [truth]
    for _ in range(size - 1):
        h = np.clip(truth + rng.uniform(-spread, spread, truth.shape), low, high)
        if keep_zero_arm is not None:
            h[..., keep_zero_arm] = 0.0
        tables.append(h)
    order = rng.permutation(size)
    return np.stack(tables)[order]


def stack_contexts(instance: ProblemInstance, T: int, u_ctx: Optional[np.ndarray]) -> np.ndarray:
    """Contexts for a batch of runs: (S, T)."""
    sched = instance.schedule
    if sched.kind == "iid":
        return sched.generate(T, u_ctx)
    S = 1 if u_ctx is None else np.shape(u_ctx)[0]
    return np.broadcast_to(sched.generate(T), (S, T))

