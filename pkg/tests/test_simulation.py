from fractions import Fraction

import numpy as np
import pytest
from scipy.special import expit

from tevim.errors import ConfigurationError
from tevim.estimands import TevimEstimate
from tevim.simulation import (
    CSV_COLUMNS,
    ORACLE,
    SIM_SUBSETS,
    SUBSET_1,
    SUBSET_2,
    TRUE_ATE_CLOSED_FORM,
    McGrid,
    baseline_mean,
    generate_dgp,
    generate_null_dgp,
    monte_carlo,
    true_cate,
    true_propensity,
    true_subset_cate,
    true_values,
)

# exact moments of U(-1,1): E X^2 = 1/3, E X^4 = 1/5, E X^6 = 1/7
ATE = Fraction(7, 5) / 3 + Fraction(25, 27)
THETA1 = Fraction(1, 7) + Fraction(49, 25) / 5 - (Fraction(7, 5) / 3) ** 2
THETA2 = Fraction(25, 9) ** 2 * (Fraction(1, 5) - Fraction(1, 9))
VTE = THETA1 + THETA2


def test_formula_examples():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(true_cate(x), [0.0, 2.4 + 25 / 9])
    assert true_propensity(x)[0] == 0.5
    assert baseline_mean(x)[0] == 0.0


def test_oracle_columns_fidelity():
    s = generate_dgp(1000, seed=1)
    X = s.data.covariates
    x1, x2 = X[:, 0], X[:, 1]
    assert np.max(np.abs(s.tau - (x1**2 * (x1 + 1.4) + 25 * x2**2 / 9))) <= 1e-12
    assert np.max(np.abs(s.pi - expit(-0.4 * x1 + 0.1 * x1 * x2))) <= 1e-12
    assert np.max(np.abs(s.mu0 - (x1 * x2 + 2 * x2**2 - x1))) <= 1e-12
    np.testing.assert_array_equal(s.mu1, s.mu0 + s.tau)


def test_dgp_deterministic():
    a, b = generate_dgp(50, 3), generate_dgp(50, 3)
    assert a.data == b.data
    assert not generate_dgp(50, 4).data == a.data


def test_empirical_ate():
    s = generate_dgp(1_000_000, seed=2)
    assert abs(s.tau.mean() - 1.39) < 0.01


def test_truths_against_exact_fractions():
    tv = true_values()
    assert tv.ate == pytest.approx(float(ATE), abs=1e-10)
    assert tv.theta1 == pytest.approx(float(THETA1), abs=1e-10)
    assert tv.theta2 == pytest.approx(float(THETA2), abs=1e-10)
    assert tv.vte == pytest.approx(float(VTE), abs=1e-10)
    assert TRUE_ATE_CLOSED_FORM == pytest.approx(float(ATE), rel=1e-14)
    for value, target in ((tv.psi1, 0.32), (tv.psi2, 0.68), (tv.ate, 1.39), (tv.vte, 1.00)):
        assert abs(value - target) <= 0.005
    assert tv.lambda_bound == pytest.approx(0.5172, abs=1e-3)


def test_truths_converge():
    a, b = true_values(1000), true_values(2000)
    for k in ("psi1", "psi2", "ate", "vte"):
        assert abs(getattr(a, k) - getattr(b, k)) < 1e-4


def test_truths_resolution_floor():
    with pytest.raises(ConfigurationError):
        true_values(100)


def test_subset_cate_closed_form():
    rng = np.random.default_rng(0)
    x1 = rng.uniform(-1, 1)
    # average tau over a fine grid in x2
    g = np.linspace(-1, 1, 200_001)
    numeric = np.trapezoid(true_cate(np.column_stack([np.full_like(g, x1), g])), g) / 2
    assert true_subset_cate(np.array([[x1, 0.3]]), SUBSET_2)[0] == pytest.approx(numeric, abs=1e-8)
    assert true_subset_cate(np.array([[x1, 0.3]]), SUBSET_1)[0] == pytest.approx(
        7 / 15 + 25 / 9 * 0.09, rel=1e-12
    )


def test_null_dgp_has_no_x1_modification():
    s = generate_null_dgp(100, 0)
    np.testing.assert_allclose(s.tau, 1 + s.data.covariates[:, 1])
    np.testing.assert_array_equal(s.pi, 0.5)


def test_shim_estimates_at_truth():
    tv = true_values()

    def shim(sample, variant, spec, seed):
        return {s: TevimEstimate(s, 0.0, 1.0, tv.psi(s), 0.01, sample.data.n) for s in SIM_SUBSETS}

    res = monte_carlo(McGrid(n_values=(100,), variants=("2B",)), 5, estimate_fn=shim)
    for s in SIM_SUBSETS:
        m = res.cell("2B", "ridge", 100, s.name)
        assert m.scaled_bias == pytest.approx(0.0, abs=1e-12)
        assert m.coverage == 1.0
        assert m.replicates == 5


def test_failures_are_counted():
    from tevim.errors import NumericError

    def flaky(sample, variant, spec, seed):
        if sample.data.outcome[0] > 0:
            raise NumericError("boom")
        return {s: TevimEstimate(s, 0.0, 1.0, 0.5, 0.01, sample.data.n) for s in SIM_SUBSETS}

    res = monte_carlo(McGrid(n_values=(30,), variants=("1A",)), 20, estimate_fn=flaky)
    errs = res.failures[("1A", "ridge", 30)]
    assert 0 < len(errs) < 20
    assert all("NumericError" in e for e in errs)
    m = res.cell("1A", "ridge", 30, "X1")
    assert m.replicates + m.failures == 20


def test_metric_rows_and_csv():
    res = monte_carlo(McGrid(n_values=(200,), variants=("1A", "2B")), 2, master_seed=1)
    assert len(res.metrics) == 4
    lines = res.to_csv().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 5


def test_monte_carlo_thread_independent():
    grid = McGrid(n_values=(200,), variants=("2B", ORACLE))
    a = monte_carlo(grid, 4, master_seed=3, threads=1)
    b = monte_carlo(grid, 4, master_seed=3, threads=3)
    assert a.to_csv() == b.to_csv()


def test_oracle_coverage():
    res = monte_carlo(McGrid(n_values=(4000,), variants=(ORACLE,)), 500, master_seed=11)
    for s in SIM_SUBSETS:
        cov = res.cell(ORACLE, ORACLE, 4000, s.name).coverage
        assert 0.92 <= cov <= 0.98, (s.name, cov)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        McGrid(variants=("3C",))
    with pytest.raises(ConfigurationError):
        monte_carlo(McGrid(), 0)
