"""Analytical companion to the simulator: chains, absorption, safety design."""

from snowsim.analysis.chains import (
    BirthDeathChain,
    absorption_probability,
    build_slush_chain,
    build_snowflake_chain,
    ever_hit_probability,
    expected_absorption_time,
    hitting_prob_within,
    hitting_profile,
)
from snowsim.analysis.design import (
    DriftExpectation,
    Infeasible,
    SafetyDesign,
    churn_adjusted_delta,
    early_commit_threshold,
    feasibility_search,
    find_point_of_no_return,
    phase_shift_index,
    run_length_beta,
    run_length_tail,
    snowball_divergence_time,
    snowball_drift,
    snowball_kappa_rate,
)

__all__ = [
    "BirthDeathChain",
    "build_slush_chain",
    "build_snowflake_chain",
    "absorption_probability",
    "expected_absorption_time",
    "hitting_prob_within",
    "hitting_profile",
    "ever_hit_probability",
    "Infeasible",
    "SafetyDesign",
    "DriftExpectation",
    "phase_shift_index",
    "find_point_of_no_return",
    "run_length_tail",
    "run_length_beta",
    "snowball_drift",
    "snowball_kappa_rate",
    "snowball_divergence_time",
    "early_commit_threshold",
    "churn_adjusted_delta",
    "feasibility_search",
]
