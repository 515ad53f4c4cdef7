"""One-step influence-curve estimators built on cross-fitted per-row quantities.

Every estimator here takes aligned vectors ``phi`` (pseudo-outcomes), ``tau``
(CATE), ``tau_s`` (subset CATE) and ``tau_p`` (ATE as a per-row constant) and
returns a point estimate together with the empirical second moment of its
estimated influence curve as a variance, ``n^-2 sum IC_i^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from tevim.data import CovariateSubset, Dataset
from tevim.errors import BoundUndefinedError, DegenerateVTEError, ValidationError

Z_95 = 1.959964

TWO_SIDED = "two-sided"
GREATER = "greater"


def z_value(level: float = 0.95) -> float:
    if not 0 < level < 1:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    if level == 0.95:
        return Z_95
    return float(norm.ppf(0.5 + level / 2))


def _aligned(*vectors):
    arrays = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    n = len(arrays[0])
    if n == 0:
        raise ValidationError("empty input vectors")
    if any(len(v) != n for v in arrays):
        raise ValidationError(f"input vectors are not aligned: {[len(v) for v in arrays]}")
    return arrays


def _p_value(value, se, alternative):
    if alternative == GREATER:
        # H0: parameter <= 0; a non-positive estimate carries no evidence against it
        if value <= 0:
            return 1.0
        return float(norm.sf(value / se)) if se > 0 else 0.0
    if se > 0:
        return float(2 * norm.sf(abs(value) / se))
    return 1.0 if value == 0 else 0.0


@dataclass(frozen=True)
class ScalarEstimate:
    value: float
    variance: float
    n: int
    level: float = 0.95
    alternative: str = TWO_SIDED

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def ci(self) -> tuple[float, float]:
        half = z_value(self.level) * self.se
        return (self.value - half, self.value + half)

    @property
    def p_value(self) -> float:
        return _p_value(self.value, self.se, self.alternative)

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {
            "value": self.value,
            "variance": self.variance,
            "se": self.se,
            "ci": [lo, hi],
            "p_value": self.p_value,
            "alternative": self.alternative,
        }


def _from_ic(value, ic, level, alternative=TWO_SIDED) -> ScalarEstimate:
    n = len(ic)
    return ScalarEstimate(float(value), float(np.sum(ic**2) / n**2), n, level, alternative)


@dataclass(frozen=True)
class TevimEstimate:
    subset: CovariateSubset
    theta_s: float
    theta_p: float
    psi: float
    var_psi: float
    n: int
    level: float = 0.95
    flags: tuple[str, ...] = field(default=())

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_psi))

    @property
    def ci_raw(self) -> tuple[float, float]:
        half = z_value(self.level) * self.se
        return (self.psi - half, self.psi + half)

    @property
    def ci_truncated(self) -> tuple[float, float]:
        lo, hi = self.ci_raw
        return (min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0))

    @property
    def p_value_wald(self) -> float:
        # conservative when the importance is truly zero; see split_sample_null_test
        return _p_value(self.psi, self.se, TWO_SIDED)

    def covers(self, truth: float) -> bool:
        lo, hi = self.ci_raw
        return lo <= truth <= hi

    def to_dict(self, covariate_names=None) -> dict:
        return {
            "subset": self.subset.label(covariate_names),
            "indices": list(self.subset.indices),
            "psi": self.psi,
            "se": self.se,
            "var_psi": self.var_psi,
            "ci_raw": list(self.ci_raw),
            "ci_truncated": list(self.ci_truncated),
            "p_value_wald": self.p_value_wald,
            "theta_s": self.theta_s,
            "theta_p": self.theta_p,
            "n": self.n,
            "flags": list(self.flags),
        }


def theta_terms(phi, tau, tau_s) -> np.ndarray:
    """Per-row ``(phi - tau_s)^2 - (phi - tau)^2``; its mean is the one-step estimate."""
    phi, tau, tau_s = _aligned(phi, tau, tau_s)
    return (phi - tau_s) ** 2 - (phi - tau) ** 2


def estimate_theta(phi, tau, tau_s) -> float:
    """``E[var{tau(X) | X_-s}]``; may be negative in finite samples."""
    return float(np.mean(theta_terms(phi, tau, tau_s)))


def psi_influence(phi, tau, tau_s, tau_p) -> tuple[float, float, float, np.ndarray]:
    """Return ``(theta_s, theta_p, psi, ic)`` with the per-row IC estimate of ``psi``."""
    phi, tau, tau_s, tau_p = _aligned(phi, tau, tau_s, tau_p)
    a = (phi - tau_s) ** 2
    b = (phi - tau_p) ** 2
    c = (phi - tau) ** 2
    theta_s = float(np.mean(a - c))
    theta_p = float(np.mean(b - c))
    if theta_p == 0:
        raise DegenerateVTEError("estimated VTE is exactly zero; the TE-VIM is undefined")
    psi = theta_s / theta_p
    ic = (a - psi * b + (psi - 1) * c) / theta_p
    return theta_s, theta_p, psi, ic


def estimate_psi(phi, tau, tau_s, tau_p, subset=None, level: float = 0.95) -> TevimEstimate:
    """Ratio ``theta_s / theta_p`` with IC-based variance and Wald intervals.

    Flags: ``negative_vte`` and ``negative_theta`` for negative raw estimates,
    ``vte_ci_includes_zero`` when heterogeneity is not distinguishable from
    zero (the ratio is then poorly determined), and ``psi_outside_unit_interval``.
    """
    theta_s, theta_p, psi, ic = psi_influence(phi, tau, tau_s, tau_p)
    n = len(ic)
    flags = []
    if theta_p < 0:
        flags.append("negative_vte")
    if theta_s < 0:
        flags.append("negative_theta")
    vte = estimate_vte(phi, tau, tau_p, level=level)
    if vte.ci[0] <= 0:
        flags.append("vte_ci_includes_zero")
    if not 0 <= psi <= 1:
        flags.append("psi_outside_unit_interval")
    if subset is None:
        subset = CovariateSubset((), 1, name="unnamed")
    return TevimEstimate(
        subset, theta_s, theta_p, psi, float(np.sum(ic**2) / n**2), n, level, tuple(flags)
    )


def estimate_ate(phi, level: float = 0.95) -> ScalarEstimate:
    """AIPW mean of the pseudo-outcomes; IC ``phi - tau_p``."""
    (phi,) = _aligned(phi)
    value = phi.mean()
    return _from_ic(value, phi - value, level)


def estimate_vte(phi, tau, tau_p, level: float = 0.95) -> ScalarEstimate:
    """``var{tau(X)}`` as the full-set case of :func:`estimate_theta`.

    The p-value is one-sided, for ``H0: VTE <= 0``.
    """
    terms = theta_terms(phi, tau, tau_p)
    value = terms.mean()
    return _from_ic(value, terms - value, level, GREATER)


@dataclass(frozen=True)
class RootVTE:
    value: float
    ci: tuple[float, float]

    def to_dict(self) -> dict:
        return {"value": self.value, "ci": list(self.ci)}


def root_vte(vte: ScalarEstimate) -> RootVTE:
    """Square root of the VTE and its interval, each truncated at zero first."""
    lo, hi = vte.ci
    return RootVTE(
        float(np.sqrt(max(vte.value, 0.0))),
        (float(np.sqrt(max(lo, 0.0))), float(np.sqrt(max(hi, 0.0)))),
    )


def estimate_var_tau_s(phi, tau_s, tau_p, level: float = 0.95) -> ScalarEstimate:
    """``var{tau_s(X)}``, valid without exchangeability given ``X_-s`` alone."""
    phi, tau_s, tau_p = _aligned(phi, tau_s, tau_p)
    terms = (phi - tau_p) ** 2 - (phi - tau_s) ** 2
    value = terms.mean()
    return _from_ic(value, terms - value, level, GREATER)


def estimate_lambda_bound(phi, tau, tau_p, level: float = 0.95) -> ScalarEstimate:
    """Chebyshev bound ``VTE / ATE^2`` on the fraction of units with a non-positive CATE.

    The ATE in the denominator is the AIPW mean of ``phi``; the VTE uses the
    per-row ``tau_p``.
    """
    phi, tau, tau_p = _aligned(phi, tau, tau_p)
    ate = phi.mean()
    if not ate > 0:
        raise BoundUndefinedError(f"the bound needs a positive ATE, estimated {ate:.6g}")
    vte_terms = (phi - tau_p) ** 2 - (phi - tau) ** 2
    value = vte_terms.mean() / ate**2
    ic = (vte_terms - value * ate * (2 * phi - ate)) / ate**2
    return _from_ic(value, ic, level)


@dataclass(frozen=True)
class NullTestResult:
    subset: CovariateSubset
    statistic: float
    p_value: float
    vte: ScalarEstimate
    var_tau_s: ScalarEstimate

    def to_dict(self, covariate_names=None) -> dict:
        return {
            "subset": self.subset.label(covariate_names),
            "statistic": self.statistic,
            "p_value": self.p_value,
            "vte_half1": self.vte.to_dict(),
            "var_tau_s_half2": self.var_tau_s.to_dict(),
        }


def split_sample_null_test(
    data: Dataset, cfg, halves=None, nuisance_factory=None, threads: int = 1
) -> dict:
    """Test ``H0: theta_s = 0`` by estimating ``var{tau}`` and ``var{tau_s}`` in separate halves.

    The two estimators are independent, so their difference is asymptotically
    normal under the null whenever ``var{tau_s(X)} > 0``. Returns one
    :class:`NullTestResult` per subset in ``cfg.subsets``; the p-value is the
    upper normal tail.
    """
    from tevim.crossfit import derive_seed, make_folds, run_algorithm
    from tevim.data import BINARY

    if halves is None:
        strat = data.treatment if data.mode == BINARY else None
        halves = make_folds(data.n, 2, strat, seed=derive_seed(cfg.seed, "null-test-halves"))
    first = data.take(halves.rows(1))
    second = data.take(halves.rows(2))

    est1 = run_algorithm(first, cfg.with_subsets(()), nuisance_factory=nuisance_factory, threads=threads)
    vte = estimate_vte(est1.phi, est1.tau, est1.tau_p)
    est2 = run_algorithm(second, cfg, nuisance_factory=nuisance_factory, threads=threads)

    results = {}
    for s in cfg.subsets:
        v_s = estimate_var_tau_s(est2.phi, est2.tau_s[s], est2.tau_p)
        diff = vte.value - v_s.value
        denom = np.sqrt(vte.variance + v_s.variance)
        if denom > 0:
            stat = float(diff / denom)
        else:
            stat = 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
        results[s] = NullTestResult(s, stat, float(norm.sf(stat)), vte, v_s)
    return results
