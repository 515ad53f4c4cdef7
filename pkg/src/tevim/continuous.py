"""Continuous-treatment analogue of the CATE.

The target is ``lambda(x) = cov(A, Y | X=x) / var(A | X=x)``, which equals
``mu(1,x) - mu(0,x)`` for a binary treatment. Its pseudo-outcome is

    [y - mu(x) - lambda(x) (a - pi(x))] (a - pi(x)) / v(x) + lambda(x)

with ``mu(x) = E(Y|X)``, ``pi(x) = E(A|X)`` and ``v(x) = var(A|X)``.

``lambda`` is estimated as a ratio of two regressions: the cross-product of
residuals ``(A - pi)(Y - mu)`` regressed on X, divided by ``v``. This is a
plain moment estimator, not a canonical choice, and inference built on it
should be read as exploratory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from tevim.data import CONTINUOUS, Dataset
from tevim.errors import ConfigurationError, NumericError
from tevim.learners import FittedModel, LearnerSpec, fit
from tevim.nuisance import KnownConstant, NuisanceFits

DEFAULT_VARIANCE_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class DerivedModel(FittedModel):
    """A model defined pointwise from other fitted models."""

    fn: Callable[[np.ndarray], np.ndarray] = None

    def _predict(self, X):
        return np.asarray(self.fn(X), dtype=np.float64)


@dataclass(frozen=True)
class ContinuousNuisance:
    mu_x: FittedModel
    pi_x: FittedModel
    v_x: FittedModel
    lambda_x: FittedModel

    def cate(self, X) -> np.ndarray:
        return self.lambda_x.predict(X)

    def pseudo_outcomes(self, y, a, X) -> np.ndarray:
        return pseudo_outcome_lambda(y, a, X, self)


def _floored(model: FittedModel, floor: float) -> DerivedModel:
    return DerivedModel(model.feature_count, fn=lambda X: np.maximum(model.predict(X), floor))


def fit_continuous_nuisance(
    train: Dataset,
    outcome_spec: LearnerSpec,
    treatment_spec: LearnerSpec | KnownConstant,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    seed: int = 0,
    variance_spec: LearnerSpec | None = None,
    lambda_spec: LearnerSpec | None = None,
) -> ContinuousNuisance:
    """Fit ``E(Y|X)``, ``E(A|X)``, ``var(A|X)`` and ``lambda(x)`` on training data.

    Variance and ``lambda`` regressions default to ``outcome_spec``.
    """
    if train.mode != CONTINUOUS:
        raise ConfigurationError("continuous nuisances need a dataset in continuous mode")
    if not variance_floor > 0:
        raise ConfigurationError(f"variance floor must be positive, got {variance_floor}")
    variance_spec = variance_spec or outcome_spec
    lambda_spec = lambda_spec or outcome_spec
    X, y, a = train.covariates, train.outcome, train.treatment

    mu_x = fit(outcome_spec, X, y, seed=seed)
    if isinstance(treatment_spec, KnownConstant):
        value = treatment_spec.value
        pi_x = DerivedModel(train.p, fn=lambda Z: np.full(Z.shape[0], value))
    else:
        pi_x = fit(treatment_spec, X, a, seed=seed + 1)
    a_resid = a - pi_x.predict(X)
    y_resid = y - mu_x.predict(X)
    v_x = _floored(fit(variance_spec, X, a_resid**2, seed=seed + 2), variance_floor)
    cov_x = fit(lambda_spec, X, a_resid * y_resid, seed=seed + 3)
    lambda_x = DerivedModel(train.p, fn=lambda Z: cov_x.predict(Z) / v_x.predict(Z))
    return ContinuousNuisance(mu_x, pi_x, v_x, lambda_x)


def moment_matched_nuisance(fits: NuisanceFits) -> ContinuousNuisance:
    """Continuous nuisances implied by binary ones.

    ``mu = pi mu1 + (1 - pi) mu0``, ``v = pi (1 - pi)``, ``lambda = mu1 - mu0``.
    """
    q = fits.mu0.feature_count

    def mu(X):
        pi = fits.pi.predict(X)
        return pi * fits.mu1.predict(X) + (1 - pi) * fits.mu0.predict(X)

    def v(X):
        pi = fits.pi.predict(X)
        return pi * (1 - pi)

    return ContinuousNuisance(
        mu_x=DerivedModel(q, fn=mu),
        pi_x=fits.pi,
        v_x=DerivedModel(q, fn=v),
        lambda_x=DerivedModel(q, fn=fits.cate),
    )


def lambda_pseudo_outcome(y, a, mu, pi, v, lam) -> np.ndarray:
    y, a, mu, pi, v, lam = (np.asarray(t, dtype=np.float64) for t in (y, a, mu, pi, v, lam))
    resid = a - pi
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        phi = (y - mu - lam * resid) * resid / v + lam
    bad = np.flatnonzero(~np.isfinite(phi))
    if bad.size:
        raise NumericError(f"non-finite pseudo-outcome at row {int(bad[0])}")
    return phi


def pseudo_outcome_lambda(y, a, X, nz: ContinuousNuisance) -> np.ndarray:
    return lambda_pseudo_outcome(
        y, a, nz.mu_x.predict(X), nz.pi_x.predict(X), nz.v_x.predict(X), nz.lambda_x.predict(X)
    )


def continuous_tevim(data: Dataset, cfg, nuisance_factory=None):
    """TE-VIMs for ``lambda(x)``: the binary pipeline with ``phi_lambda`` and ``lambda``.

    Returns an :class:`tevim.analysis.AnalysisResult`; its ATE and VTE entries
    are ``E{lambda(X)}`` and ``var{lambda(X)}``.
    """
    from tevim.analysis import analyze

    if data.mode != CONTINUOUS:
        raise ConfigurationError("continuous_tevim needs a dataset in continuous mode")
    return analyze(data, cfg, nuisance_factory=nuisance_factory)
