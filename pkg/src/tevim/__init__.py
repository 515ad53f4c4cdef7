"""Treatment effect variable importance measures (TE-VIMs).

The proportion of CATE variance attributable to a covariate subset, estimated
with one-step influence-curve estimators and cross-fitting.
"""

__version__ = "0.1.0"

from tevim.analysis import AnalysisResult, analyze
from tevim.crossfit import AlgorithmConfig, make_folds, run_algorithm
from tevim.data import CovariateSubset, Dataset, drop_columns, load_csv
from tevim.estimands import (
    estimate_ate,
    estimate_lambda_bound,
    estimate_psi,
    estimate_theta,
    estimate_var_tau_s,
    estimate_vte,
    split_sample_null_test,
)
from tevim.learners import (
    FLEXIBLE,
    BoostedTreesSpec,
    ConstantSpec,
    KNNSpec,
    RidgeBasisSpec,
)
from tevim.nuisance import KnownConstant

__all__ = [
    "AlgorithmConfig",
    "AnalysisResult",
    "BoostedTreesSpec",
    "ConstantSpec",
    "CovariateSubset",
    "Dataset",
    "FLEXIBLE",
    "KNNSpec",
    "KnownConstant",
    "RidgeBasisSpec",
    "analyze",
    "drop_columns",
    "estimate_ate",
    "estimate_lambda_bound",
    "estimate_psi",
    "estimate_theta",
    "estimate_var_tau_s",
    "estimate_vte",
    "load_csv",
    "make_folds",
    "run_algorithm",
    "split_sample_null_test",
]
