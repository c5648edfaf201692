"""Causal player evaluation from attempt-level data."""
from .core import (ALWAYS, AttemptRecord, Constraint, Dataset, EstimandSpec,
                   InterventionDistribution, Kind, XCondition, conditioning_indices,
                   empirical_success_rate)
from .crossfit import FoldAssignment, LearnerConfig, NuisanceMatrices, fit_nuisances, make_folds
from .errors import *  # noqa: F401,F403
from .estimators import (ContrastResult, EstimateResult, Estimator, compute_eif, estimate,
                         estimate_contrast, estimate_onestep, estimate_substitution,
                         estimate_tmle, wald_ci)

__version__ = "0.1.0"
