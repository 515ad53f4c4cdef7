"""CATE metalearners and the subset-CATE regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tevim.data import CovariateSubset
from tevim.errors import ValidationError
from tevim.learners import FLEXIBLE, ConstantModel, FittedModel, LearnerSpec, fit

T_LEARNER = "T"
DR_LEARNER = "DR"


@dataclass(frozen=True)
class CateModel:
    """``tau(x)``: either ``mu1 - mu0`` (T) or a single regression of ``phi`` on X (DR)."""

    kind: str
    models: tuple[FittedModel, ...]

    def predict(self, X) -> np.ndarray:
        if self.kind == T_LEARNER:
            mu0, mu1 = self.models
            return mu1.predict(X) - mu0.predict(X)
        return self.models[0].predict(X)


@dataclass(frozen=True)
class SubsetCateModel:
    """``tau_s``, a function of ``X_{-s}`` only; constant when ``s`` is the full set."""

    subset: CovariateSubset
    model: FittedModel

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.model.predict(X[:, self.subset.kept_columns()])

    @property
    def constant(self) -> float | None:
        return self.model.value if isinstance(self.model, ConstantModel) else None


def t_learner(fits) -> CateModel:
    return CateModel(T_LEARNER, (fits.mu0, fits.mu1))


def dr_learner(phi, X, spec: LearnerSpec = FLEXIBLE, seed: int = 0) -> CateModel:
    """Regress pseudo-outcomes on all covariates (no internal sample split)."""
    phi = np.asarray(phi, dtype=np.float64)
    if len(phi) != np.asarray(X).shape[0]:
        raise ValidationError("pseudo-outcomes and covariates are not aligned")
    return CateModel(DR_LEARNER, (fit(spec, X, phi, seed=seed),))


def subset_cate(
    tau_values, X_minus_s, subset: CovariateSubset, spec: LearnerSpec = FLEXIBLE, seed: int = 0
) -> SubsetCateModel:
    """Regress CATE predictions on ``X_{-s}``.

    With ``s`` the full set, ``X_minus_s`` has no columns and the result is the
    mean of ``tau_values``, i.e. the regression-based ATE for this sample.
    """
    tau_values = np.asarray(tau_values, dtype=np.float64)
    X_minus_s = np.asarray(X_minus_s, dtype=np.float64).reshape(len(tau_values), -1)
    if X_minus_s.shape[1] != subset.p - len(subset.indices):
        raise ValidationError(
            f"X_minus_s has {X_minus_s.shape[1]} columns, subset leaves {len(subset.complement())}"
        )
    return SubsetCateModel(subset, fit(spec, X_minus_s, tau_values, seed=seed))


def ate_aipw(phi) -> float:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.size == 0:
        raise ValidationError("cannot average an empty pseudo-outcome vector")
    return float(phi.mean())
