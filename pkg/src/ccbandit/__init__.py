"""Constrained contextual bandits via Lyapunov-weighted inverse gap weighting."""
from __future__ import annotations

from .igw import IgwDistribution, igw_sample, igw_solve, lemma1_gap
from .lyapunov import LyapunovConfig, QueueState, auto_parameter, phi_eval, queue_update
from .oracle import ErrorLedger, FiniteClassOracle, LinearOracle, oracle_regret
from .envs import ContextSchedule, Feasibility, ProblemInstance, make_lower_bound_instance, make_slater_instance, realize
from .benchmark import (
    LpSolution, StationaryPolicy, benchmark_policy, budget_scaling_bound, equalized_allocation, long_term_lp,
    per_context_optimum,
)
from .controller import (
    Controller, ControllerConfig, OracleSpec, RunTrace, Scaling, ensemble_run, gamma_schedule, hard_stop_run, run,
    surrogate,
)
from .metrics import compute_metrics, competitive_ratio_experiment, prop1_diagnostic, rate_fit

__all__ = [
    "IgwDistribution", "igw_sample", "igw_solve", "lemma1_gap",
    "LyapunovConfig", "QueueState", "auto_parameter", "phi_eval", "queue_update",
    "ErrorLedger", "FiniteClassOracle", "LinearOracle", "oracle_regret",
    "ContextSchedule", "Feasibility", "ProblemInstance", "make_lower_bound_instance", "make_slater_instance", "realize",
    "LpSolution", "StationaryPolicy", "benchmark_policy", "budget_scaling_bound", "equalized_allocation",
    "long_term_lp", "per_context_optimum",
    "Controller", "ControllerConfig", "OracleSpec", "RunTrace", "Scaling", "ensemble_run", "gamma_schedule",
    "hard_stop_run", "run", "surrogate",
    "compute_metrics", "competitive_ratio_experiment", "prop1_diagnostic", "rate_fit",
]

__version__ = "0.1.0"
