import numpy as np
import pytest

from tevim.analysis import analyze
from tevim.continuous import (
    continuous_tevim,
    fit_continuous_nuisance,
    lambda_pseudo_outcome,
    moment_matched_nuisance,
    pseudo_outcome_lambda,
)
from tevim.crossfit import AlgorithmConfig, make_folds, run_algorithm
from tevim.data import CONTINUOUS, CovariateSubset, Dataset
from tevim.errors import ConfigurationError
from tevim.estimands import estimate_psi
from tevim.learners import FLEXIBLE, ConstantSpec
from tevim.nuisance import fit_nuisance
from tevim.pseudo_outcome import aipw_pseudo_outcome, compute_pseudo_outcomes
from tevim.simulation import SIM_SUBSETS, generate_dgp

G = np.linspace(-0.9, 0.9, 10)
GRID = np.array([(u, v) for u in G for v in G])


def _continuous(n, seed, y_fn):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    a = X[:, 0] + rng.normal(size=n)
    y = y_fn(X, a) + rng.normal(size=n)
    return Dataset(y, a, X, mode=CONTINUOUS)


def test_conditional_variance_recovered():
    data = _continuous(10_000, 0, lambda X, a: X[:, 1] + 0.5 * a)
    nz = fit_continuous_nuisance(data, FLEXIBLE, FLEXIBLE)
    # central grid: squared residuals are heavy-tailed and the cubic fit is noisy at the edges
    g = np.linspace(-0.5, 0.5, 10)
    central = np.array([(u, v) for u in g for v in g])
    assert np.max(np.abs(nz.v_x.predict(central) - 1.0)) < 0.1


def test_lambda_zero_without_dependence():
    data = _continuous(10_000, 1, lambda X, a: X[:, 0] ** 2 - X[:, 1])
    nz = fit_continuous_nuisance(data, FLEXIBLE, FLEXIBLE)
    assert np.max(np.abs(nz.lambda_x.predict(GRID))) < 0.1


def test_binary_treatment_constant_propensity():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(400, 2))
    a = (rng.uniform(size=400) < 0.3).astype(float)
    data = Dataset(rng.normal(size=400) + a, a, X, mode=CONTINUOUS)
    nz = fit_continuous_nuisance(data, ConstantSpec(), ConstantSpec())
    pbar = a.mean()
    np.testing.assert_allclose(nz.pi_x.predict(X[:3]), pbar, rtol=1e-12)
    np.testing.assert_allclose(nz.v_x.predict(X[:3]), pbar * (1 - pbar), rtol=1e-10)


def test_variance_floor():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 1))
    a = X[:, 0].copy()  # no residual variation in A
    data = Dataset(rng.normal(size=200), a, X, mode=CONTINUOUS)
    nz = fit_continuous_nuisance(data, FLEXIBLE, FLEXIBLE, variance_floor=0.05)
    assert nz.v_x.predict(rng.normal(size=(500, 1)) * 4).min() >= 0.05
    with pytest.raises(ConfigurationError):
        fit_continuous_nuisance(data, FLEXIBLE, FLEXIBLE, variance_floor=0.0)


def test_requires_continuous_mode():
    data = generate_dgp(50, 0).data
    with pytest.raises(ConfigurationError):
        fit_continuous_nuisance(data, FLEXIBLE, FLEXIBLE)


def test_lambda_pseudo_outcome_examples():
    # zero residual
    assert lambda_pseudo_outcome([1.0 + 2.0 * 0.7], [1.2], [1.0], [0.5], [0.3], [2.0])[0] == pytest.approx(2.0)
    # a equal to its conditional mean
    assert lambda_pseudo_outcome([9.0], [0.5], [1.0], [0.5], [0.3], [2.0])[0] == 2.0
    # binary numbers: pi = 0.5, mu = 1.5, lambda = 1, v = 0.25
    phi = lambda_pseudo_outcome([3.0], [1.0], [1.5], [0.5], [0.25], [1.0])[0]
    assert phi == pytest.approx(3.0)
    assert phi == pytest.approx(aipw_pseudo_outcome([3.0], [1.0], [1.0], [2.0], [0.5])[0])


def test_moment_matched_reduction_on_fitted_models():
    sample = generate_dgp(3000, seed=4)
    d = sample.data
    fits = fit_nuisance(d, FLEXIBLE, FLEXIBLE)
    binary = compute_pseudo_outcomes(d.outcome, d.treatment, d.covariates, fits)
    cont = pseudo_outcome_lambda(d.outcome, d.treatment, d.covariates, moment_matched_nuisance(fits))
    assert np.max(np.abs(cont - binary)) <= 1e-10


@pytest.mark.parametrize("variant", ["2A", "2B", "1B"])
def test_continuous_path_reduces_to_binary(variant):
    d = generate_dgp(600, seed=5).data
    cfg = AlgorithmConfig.from_name(variant, subsets=SIM_SUBSETS, seed=3)
    cont_data = Dataset(d.outcome, d.treatment, d.covariates, d.covariate_names, mode=CONTINUOUS)
    folds = make_folds(d.n, cfg.folds, d.treatment, seed=cfg.seed)

    def factory(train, seed):
        as_binary = Dataset(train.outcome, train.treatment, train.covariates, train.covariate_names)
        fits = fit_nuisance(as_binary, cfg.outcome_spec, cfg.propensity_spec, cfg.clip, seed)
        return moment_matched_nuisance(fits)

    b = run_algorithm(d, cfg, folds=folds)
    c = run_algorithm(cont_data, cfg, folds=folds, nuisance_factory=factory)
    for s in SIM_SUBSETS:
        pb = estimate_psi(b.phi, b.tau, b.tau_s[s], b.tau_p, s).psi
        pc = estimate_psi(c.phi, c.tau, c.tau_s[s], c.tau_p, s).psi
        assert abs(pb - pc) <= 1e-8


def test_homogeneous_effect_is_flagged():
    data = _continuous(3000, 6, lambda X, a: X[:, 0] + 2.0 * a)
    cfg = AlgorithmConfig.from_name("2B", subsets=(CovariateSubset((1,), 2),), seed=1)
    res = continuous_tevim(data, cfg)
    assert abs(res.vte.value) < 2.5 * res.vte.se + 0.02
    flagged = res.warnings or any("vte_ci_includes_zero" in t.flags for t in res.tevims)
    assert flagged
    assert res.ate.value == pytest.approx(2.0, abs=0.1)


def test_continuous_vte_matches_analytic_value():
    rng = np.random.default_rng(7)
    n = 6000
    X = rng.uniform(-1, 1, size=(n, 2))
    a = rng.normal(size=n)
    y = X[:, 0] + a * (1 + X[:, 1]) + rng.normal(size=n)
    data = Dataset(y, a, X, mode=CONTINUOUS)
    res = continuous_tevim(data, AlgorithmConfig.from_name("2B", subsets=(CovariateSubset((2,), 2),), seed=2))
    # var(X2) for X2 ~ U(-1, 1)
    assert abs(res.vte.value - 1 / 3) < 4 * res.vte.se
    assert res.ate.value == pytest.approx(1.0, abs=4 * res.ate.se)


def test_continuous_requires_mode():
    with pytest.raises(ConfigurationError):
        continuous_tevim(generate_dgp(100, 0).data, AlgorithmConfig())


def test_analyze_accepts_continuous_data():
    data = _continuous(500, 8, lambda X, a: a * X[:, 1])
    res = analyze(data, AlgorithmConfig.from_name("2A", subsets=(CovariateSubset((1,), 2),)))
    assert res.lambda_bound is None or res.lambda_bound.value >= 0 or res.ate.value <= 0
