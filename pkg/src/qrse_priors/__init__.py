"""Prior-weighted quantal response statistical equilibrium (QRSE) inference.

Decision functions with exogenous prior beliefs, the maximum-entropy outcome
density with competition feedback, likelihood fitting with rolling priors, a
rational-inattention comparison solver and a price-to-returns pipeline.
"""

__version__ = "0.1.0"

from .core import ActionSet, EquilibriumParams, Grid, UtilityModel, utility, validate_probability_vector
from .decision import (
    DecisionContext,
    conditional_entropy,
    decision_probabilities,
    dual_decision_probabilities,
    kl_from_prior,
    mu_star_equivalent,
    shift_potential,
)
from .equilibrium import (
    DensityTable,
    EquilibriumModel,
    action_marginal,
    competition_gap,
    joint_density,
    log_kernel,
    marginal_density,
    outcome_given_action,
)
from .fitting import (
    EmpiricalDistribution,
    FitConfig,
    FitResult,
    build_empirical,
    fit,
    information_distinguishability,
    negative_log_likelihood,
    rolling_fit,
    sample_from_model,
)
from .priors import BeliefHistory, PriorSchedule, append_period, prior_for_period
from .ri import RiProblem, solve_ri
