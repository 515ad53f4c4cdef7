"""End-to-end analysis: run an algorithm, then every estimand on its output."""

from __future__ import annotations

from dataclasses import dataclass, field

from tevim.crossfit import AlgorithmConfig, PerObservationEstimates, run_algorithm
from tevim.data import CovariateSubset, Dataset
from tevim.errors import BoundUndefinedError, DegenerateVTEError
from tevim.estimands import (
    RootVTE,
    ScalarEstimate,
    TevimEstimate,
    estimate_ate,
    estimate_lambda_bound,
    estimate_psi,
    estimate_vte,
    root_vte,
    split_sample_null_test,
)


@dataclass
class AnalysisResult:
    ate: ScalarEstimate
    ate_regression: float
    vte: ScalarEstimate
    root_vte: RootVTE
    lambda_bound: ScalarEstimate | None
    tevims: list[TevimEstimate]
    estimates: PerObservationEstimates
    null_tests: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def tevim(self, subset: CovariateSubset) -> TevimEstimate:
        for t in self.tevims:
            if t.subset == subset:
                return t
        raise KeyError(subset)


def analyze(
    data: Dataset,
    cfg: AlgorithmConfig,
    *,
    null_test: bool = False,
    level: float = 0.95,
    nuisance_factory=None,
    threads: int = 1,
) -> AnalysisResult:
    """ATE, VTE, root-VTE, the Chebyshev bound and one TE-VIM per subset.

    TE-VIMs are sorted by decreasing point estimate. An exactly zero VTE or a
    non-positive ATE is reported as a warning instead of raising.
    """
    est = run_algorithm(data, cfg, nuisance_factory=nuisance_factory, threads=threads)
    ate = estimate_ate(est.phi, level)
    vte = estimate_vte(est.phi, est.tau, est.tau_p, level)
    warnings = []
    if vte.value < 0:
        warnings.append("negative_vte")

    try:
        bound = estimate_lambda_bound(est.phi, est.tau, est.tau_p, level)
    except BoundUndefinedError as err:
        bound = None
        warnings.append(f"lambda_bound_undefined: {err}")

    tevims = []
    try:
        for s in cfg.subsets:
            tevims.append(estimate_psi(est.phi, est.tau, est.tau_s[s], est.tau_p, s, level))
    except DegenerateVTEError as err:
        tevims = []
        warnings.append(f"degenerate_vte: {err}")
    tevims.sort(key=lambda t: -t.psi)

    nulls = {}
    if null_test and cfg.subsets:
        nulls = split_sample_null_test(data, cfg, nuisance_factory=nuisance_factory, threads=threads)

    return AnalysisResult(
        ate=ate,
        ate_regression=float(est.tau_p.mean()),
        vte=vte,
        root_vte=root_vte(vte),
        lambda_bound=bound,
        tevims=tevims,
        estimates=est,
        null_tests=nulls,
        warnings=warnings,
    )
