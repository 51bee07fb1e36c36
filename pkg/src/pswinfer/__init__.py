"""Propensity-score weighted treatment-effect estimation with sandwich and
bootstrap variance estimators, confidence intervals and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .bootstrap import (
    BootstrapDistribution,
    BootstrapPlan,
    PointEstimator,
    PSMode,
    Strategy,
    bootstrap_distribution,
    bootstrap_se,
)
from .ci import CIMethod, ConfidenceInterval, ci_basic, ci_bca, ci_percentile, ci_wald
from .data import Dataset, DesignMatrix, design_matrix, load_csv, subgroup_split, write_csv
from .errors import PSWError
from .estimators import WeightScheme, augmented_point, compute_weights, wate_point
from .glm import LogisticFit, fit_logistic, predict_probs
from .sandwich import (
    appendix_oracle_pes,
    variance_fixed,
    variance_ms_ate,
    variance_numeric,
    variance_pes_ate,
)

__all__ = [
    "BACKEND", "BootstrapDistribution", "BootstrapPlan", "CIMethod", "ConfidenceInterval",
    "Dataset", "DesignMatrix", "LogisticFit", "PSMode", "PSWError", "PointEstimator",
    "Strategy", "WeightScheme", "appendix_oracle_pes", "augmented_point", "bootstrap_distribution",
    "bootstrap_se", "ci_basic", "ci_bca", "ci_percentile", "ci_wald", "compute_weights",
    "design_matrix", "fit_logistic", "load_csv", "predict_probs", "subgroup_split",
    "variance_fixed", "variance_ms_ate", "variance_numeric", "variance_pes_ate", "wate_point",
    "write_csv",
]
