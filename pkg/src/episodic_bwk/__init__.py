"""Episodic contextual bandits-with-knapsacks: exact DP, Mimic-Opt-DP, benchmarks."""

from episodic_bwk.errors import BwkError, ConfigError, ContractViolation, NumericalError
from episodic_bwk.model import (
    A_NULL,
    THETA_NULL,
    EnvironmentModel,
    StepOutcome,
    feasible_actions,
    sample_context,
    step,
)
from episodic_bwk.dp import ExactValueTable, fluid_ub, opt_value, rollout_policy, solve_bellman
from episodic_bwk.oracles import (
    ConfidenceBounds,
    GlmSpec,
    LabeledDataset,
    exact_cb,
    fit_glm,
    glm_cb,
    karm_nonstationary_cb,
    karm_stationary_cb,
    logistic_cb,
)
from episodic_bwk.agent import (
    OptimisticValueTable,
    RunLog,
    Schedule,
    make_schedule,
    optimistic_dp,
    run_mimic_opt_dp,
    select_action,
)

__all__ = [
    "A_NULL",
    "THETA_NULL",
    "BwkError",
    "ConfidenceBounds",
    "ConfigError",
    "ContractViolation",
    "EnvironmentModel",
    "ExactValueTable",
    "GlmSpec",
    "LabeledDataset",
    "NumericalError",
    "OptimisticValueTable",
    "RunLog",
    "Schedule",
    "StepOutcome",
    "exact_cb",
    "feasible_actions",
    "fit_glm",
    "fluid_ub",
    "glm_cb",
    "karm_nonstationary_cb",
    "karm_stationary_cb",
    "logistic_cb",
    "make_schedule",
    "opt_value",
    "optimistic_dp",
    "rollout_policy",
    "run_mimic_opt_dp",
    "sample_context",
    "select_action",
    "solve_bellman",
    "step",
]
