"""Regenerate golden_3round.json by hand-simulating the controller loop.

Written independently of the package: plain python floats, scipy root finding
for the IGW normalizer, and the documented stream layout (one SeedSequence per
seed spawned into context/arm/reward/cost/master generators, one uniform per
stream per round).
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from reference import igw_reference  # noqa: E402

F = [[0.0, 0.6, 0.2], [0.0, -0.2, 0.8]]
G = [[0.0, 0.7, 0.1], [0.0, 0.9, 0.5]]
SCRIPT = [0, 1, 0]
V = 0.5
U_T = 1.0
K = 3


def simulate(seed):
    ss = np.random.SeedSequence(seed).spawn(5)
    gens = [np.random.Generator(np.random.PCG64(c)) for c in ss]
    u = {name: [float(g.random()) for _ in range(3)] for name, g in zip(("ctx", "arm", "rew", "cost"), gens[:4])}
    q, z_sum, rows = 0.0, 0.0, []
    for t in range(3):
        x = SCRIPT[t]
        w = 2.0 * q / V                       # pre-round multiplier uses Q(t-1)
        L = [F[x][a] - w * G[x][a] for a in range(K)]
        z = max(1.0, w * w)
        z_sum += z
        gamma = math.sqrt(K / U_T * z_sum) / (2.0 * z)
        probs, lam = igw_reference([-v for v in L], gamma)
        cdf, a = 0.0, K - 1
        for i, p in enumerate(probs):
            cdf += p
            if u["arm"][t] < cdf:
                a = i
                break
        if a == 0:
            r, c = 0.0, 0.0
        else:
            r = 1.0 if u["rew"][t] < 0.5 * (1 + F[x][a]) else -1.0
            c = 1.0 if u["cost"][t] < G[x][a] else 0.0
        q = max(0.0, q + c)
        rows.append({"context": x, "phi_prime": w, "gamma": gamma, "normalizer": float(lam),
                     "probs": [float(p) for p in probs], "action": a, "reward": r, "cost": c, "queue": q,
                     "surrogate": L})
    return rows


def main():
    for seed in range(1000):
        rows = simulate(seed)
        if rows[0]["cost"] > 0 and rows[1]["action"] != rows[0]["action"]:
            break
    out = {"seed": seed, "f_star": F, "g_star": G, "script": SCRIPT, "V": V, "U_T": U_T, "rounds": rows}
    path = Path(__file__).with_name("golden_3round.json")
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"seed {seed} -> {path}")


if __name__ == "__main__":
    main()
