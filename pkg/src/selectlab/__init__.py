"""Sequential claim-selection strategies under Bayesian updating."""

__version__ = "0.1.0"

from .estimation import MleResult, SecondMomentTracker, gradient_check, loglik_surface, mle, second_moment
from .harness import ExperimentConfig, RunTrace, run_experiment, run_replication, run_thompson_comparison
from .model import (
    Claim, ConfigError, Dgp, IndexMap, InputError, LinkFunction, draw_outcome, fraud_probability, generate_batch,
)
from .posterior import (
    ParamGrid, PosteriorSummary, bayes_update, concentration_metric, normal_prior_on_grid, posterior_fraud_moments,
    summarize,
)
from .strategies import (
    BetaArm, StrategySpec, most_likely_point, rml_weights, select, thompson_arm_moments, thompson_select,
)

__all__ = [
    "Claim", "ConfigError", "Dgp", "IndexMap", "InputError", "LinkFunction", "draw_outcome", "fraud_probability",
    "generate_batch", "ParamGrid", "PosteriorSummary", "bayes_update", "concentration_metric",
    "normal_prior_on_grid", "posterior_fraud_moments", "summarize", "BetaArm", "StrategySpec",
    "most_likely_point", "rml_weights", "select", "thompson_arm_moments", "thompson_select", "MleResult",
    "SecondMomentTracker", "gradient_check", "loglik_surface", "mle", "second_moment", "ExperimentConfig",
    "RunTrace", "run_experiment", "run_replication", "run_thompson_comparison", "__version__",
]
