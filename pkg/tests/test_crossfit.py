import numpy as np
import pytest

from tevim.crossfit import (
    AlgorithmConfig,
    FoldAssignment,
    derive_seed,
    fit_fold,
    make_folds,
    run_algorithm,
)
from tevim.data import CovariateSubset, Dataset
from tevim.errors import ConfigurationError
from tevim.estimands import estimate_psi
from tevim.learners import ConstantSpec, KNNSpec, RidgeBasisSpec
from tevim.simulation import SUBSET_1, SIM_SUBSETS, generate_dgp, true_values


def test_folds_forced_sizes():
    a = np.tile([0, 1], 5)
    f = make_folds(10, 5, a, seed=1)
    assert sorted(np.bincount(f.fold_of)[1:]) == [2] * 5


def test_folds_deterministic():
    a = np.tile([0, 1], 50)
    np.testing.assert_array_equal(make_folds(100, 5, a, 3).fold_of, make_folds(100, 5, a, 3).fold_of)
    assert not np.array_equal(make_folds(100, 5, a, 3).fold_of, make_folds(100, 5, a, 4).fold_of)


def test_folds_stratified_counts():
    a = np.repeat([0, 1], 500)
    f = make_folds(1000, 5, a, seed=0)
    for k in range(1, 6):
        rows = f.rows(k)
        assert (a[rows] == 1).sum() == 100 and (a[rows] == 0).sum() == 100


def test_folds_unbalanced_arms_differ_by_one():
    a = np.r_[np.zeros(23), np.ones(14)]
    f = make_folds(37, 4, a, seed=2)
    for arm in (0, 1):
        counts = np.bincount(f.fold_of[a == arm], minlength=5)[1:]
        assert counts.max() - counts.min() <= 1
    sizes = np.bincount(f.fold_of)[1:]
    assert sizes.max() - sizes.min() <= 1


def test_small_arm_rejected():
    a = np.r_[np.zeros(20), np.ones(3)]
    with pytest.raises(ConfigurationError, match="fewer folds"):
        make_folds(23, 5, a)


def test_derive_seed_stable():
    assert derive_seed(0, 1, "x") == derive_seed(0, 1, "x")
    assert derive_seed(0, 1, "x") != derive_seed(0, 2, "x")
    assert 0 <= derive_seed(2**70, "a") < 2**63


def test_config_names():
    for name in ("1A", "1B", "2A", "2B"):
        assert AlgorithmConfig.from_name(name).name == name
    with pytest.raises(ConfigurationError):
        AlgorithmConfig.from_name("3C")
    with pytest.raises(ConfigurationError):
        AlgorithmConfig(subsets=(SUBSET_1, SUBSET_1))


def test_constant_learners_variant_a():
    rng = np.random.default_rng(0)
    n = 40
    X = rng.normal(size=(n, 2))
    a = np.tile([0.0, 1.0], n // 2)
    y = rng.normal(size=n) + 2 * a
    data = Dataset(y, a, X)
    const = ConstantSpec()
    cfg = AlgorithmConfig.from_name(
        "2A", folds=4, outcome_spec=const, propensity_spec=const, cate_spec=const, subset_spec=const
    )
    est = run_algorithm(data, cfg)
    for k in range(1, 5):
        test = est.folds.rows(k)
        train = est.folds.fold_of != k
        diff = y[train & (a == 1)].mean() - y[train & (a == 0)].mean()
        np.testing.assert_allclose(est.tau[test], diff, rtol=1e-12)
        np.testing.assert_allclose(est.tau_p[test], diff, rtol=1e-12)


@pytest.mark.parametrize("spec", [KNNSpec(k=7), RidgeBasisSpec(degree=2)], ids=lambda s: s.kind)
@pytest.mark.parametrize("variant", ["A", "B"])
def test_duplicated_halves_match_no_split(spec, variant):
    half = generate_dgp(150, seed=9).data
    doubled = Dataset(
        np.r_[half.outcome, half.outcome],
        np.r_[half.treatment, half.treatment],
        np.r_[half.covariates, half.covariates],
        half.covariate_names,
    )
    kw = dict(
        subsets=SIM_SUBSETS,
        outcome_spec=spec,
        propensity_spec=spec,
        cate_spec=spec,
        subset_spec=spec,
    )
    one = run_algorithm(half, AlgorithmConfig.from_name("1" + variant, **kw))
    folds = FoldAssignment(np.r_[np.ones(150, int), np.full(150, 2)], 2)
    two = run_algorithm(doubled, AlgorithmConfig.from_name("2" + variant, folds=2, **kw), folds=folds)
    for part in (slice(0, 150), slice(150, 300)):
        np.testing.assert_array_equal(two.phi[part], one.phi)
        np.testing.assert_array_equal(two.tau[part], one.tau)
        np.testing.assert_array_equal(two.tau_p[part], one.tau_p)
        for s in SIM_SUBSETS:
            np.testing.assert_array_equal(two.tau_s[s][part], one.tau_s[s])


@pytest.fixture(scope="module")
def dgp_run():
    data = generate_dgp(300, seed=13).data
    cfg = AlgorithmConfig.from_name("2B", folds=3, subsets=SIM_SUBSETS, seed=5)
    return data, cfg, run_algorithm(data, cfg)


def test_out_of_fold_purity(dgp_run):
    data, cfg, est = dgp_run
    for k in range(1, 4):
        test = est.folds.rows(k)
        models = fit_fold(data, np.flatnonzero(est.folds.fold_of != k), cfg, k)
        phi, tau, tau_s, tau_p = models.predict(data.outcome[test], data.treatment[test], data.covariates[test])
        np.testing.assert_array_equal(phi, est.phi[test])
        np.testing.assert_array_equal(tau, est.tau[test])
        np.testing.assert_array_equal(tau_p, est.tau_p[test])
        for s in SIM_SUBSETS:
            np.testing.assert_array_equal(tau_s[s], est.tau_s[s][test])


def test_fold_mean_is_tau_p(dgp_run):
    data, cfg, est = dgp_run
    for k in range(1, 4):
        assert len(np.unique(est.tau_p[est.folds.rows(k)])) == 1


def test_row_permutation_equivariance(dgp_run):
    data, cfg, est = dgp_run
    perm = np.random.default_rng(1).permutation(data.n)
    permuted = data.take(perm)
    folds = FoldAssignment(est.folds.fold_of[perm], est.folds.K)
    est2 = run_algorithm(permuted, cfg, folds=folds)
    np.testing.assert_array_equal(est2.phi, est.phi[perm])
    np.testing.assert_array_equal(est2.tau, est.tau[perm])
    for s in SIM_SUBSETS:
        np.testing.assert_array_equal(est2.tau_s[s], est.tau_s[s][perm])


def test_thread_count_does_not_change_output(dgp_run):
    data, cfg, est = dgp_run
    est4 = run_algorithm(data, cfg, threads=4)
    np.testing.assert_array_equal(est4.phi, est.phi)
    np.testing.assert_array_equal(est4.tau, est.tau)
    for s in SIM_SUBSETS:
        np.testing.assert_array_equal(est4.tau_s[s], est.tau_s[s])


def test_subsets_share_phi_and_tau(dgp_run):
    data, cfg, est = dgp_run
    one = run_algorithm(data, cfg.with_subsets((SUBSET_1,)))
    np.testing.assert_array_equal(one.phi, est.phi)
    np.testing.assert_array_equal(one.tau, est.tau)
    np.testing.assert_array_equal(one.tau_s[SUBSET_1], est.tau_s[SUBSET_1])


def test_full_set_always_present(dgp_run):
    _, _, est = dgp_run
    assert est.subsets[-1] == CovariateSubset.full(2)


def test_fold_errors_are_annotated():
    data = generate_dgp(60, seed=0).data
    cfg = AlgorithmConfig.from_name("2B", folds=3, outcome_spec=KNNSpec(k=25))
    with pytest.raises(ConfigurationError, match=r"^fold \d+:"):
        run_algorithm(data, cfg)


def test_algorithm_2b_recovers_psi():
    data = generate_dgp(2000, seed=17).data
    est = run_algorithm(data, AlgorithmConfig.from_name("2B", subsets=SIM_SUBSETS, seed=17))
    psi = estimate_psi(est.phi, est.tau, est.tau_s[SUBSET_1], est.tau_p, SUBSET_1)
    truth = true_values().psi1
    assert abs(psi.psi - truth) < 3 * psi.se
