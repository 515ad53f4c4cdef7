"""Outcome regressions and propensity scores for binary treatments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tevim.data import BINARY, Dataset
from tevim.errors import ConfigurationError, EstimationError
from tevim.learners import (
    DEFAULT_CLIP,
    ConstantModel,
    ConstantSpec,
    FittedModel,
    LearnerSpec,
    fit,
    fit_probability,
)


@dataclass(frozen=True)
class KnownConstant:
    """A propensity score fixed by design, e.g. the randomization probability."""

    kind = "known_constant"
    value: float

    def __post_init__(self):
        if not 0 < self.value < 1:
            raise ConfigurationError(f"known propensity must lie in (0, 1), got {self.value}")


PropensitySpec = LearnerSpec | KnownConstant


@dataclass(frozen=True)
class NuisanceFits:
    mu0: FittedModel
    mu1: FittedModel
    pi: FittedModel
    clip: float = DEFAULT_CLIP

    def outcome(self, a, X) -> np.ndarray:
        """``mu(a_i, x_i)`` row by row."""
        a = np.asarray(a)
        return np.where(a == 1, self.mu1.predict(X), self.mu0.predict(X))

    def cate(self, X) -> np.ndarray:
        return self.mu1.predict(X) - self.mu0.predict(X)

    def pseudo_outcomes(self, y, a, X) -> np.ndarray:
        from tevim.pseudo_outcome import compute_pseudo_outcomes

        return compute_pseudo_outcomes(y, a, X, self)


def fit_outcome_models(train: Dataset, spec: LearnerSpec, seed: int = 0):
    """Regress ``Y`` on ``X`` separately within each treatment arm."""
    models = []
    for arm in (0, 1):
        rows = train.treatment == arm
        if not rows.any():
            raise EstimationError(
                f"treatment arm {arm} is empty in the training data; use arm-stratified folds"
            )
        models.append(fit(spec, train.covariates[rows], train.outcome[rows], seed=seed + arm))
    return models[0], models[1]


def fit_propensity(
    train: Dataset, spec: PropensitySpec, clip: float = DEFAULT_CLIP, seed: int = 0
) -> FittedModel:
    if train.mode != BINARY:
        raise ConfigurationError("propensity scores are defined for binary treatments only")
    if isinstance(spec, KnownConstant):
        value = float(np.clip(spec.value, clip, 1 - clip))
        return ConstantModel(train.p, value=value, is_probability=True, clip=clip)
    if isinstance(spec, ConstantSpec):
        # training-set treatment mean, the natural choice for randomized trials
        return ConstantModel(
            train.p, value=float(train.treatment.mean()), is_probability=True, clip=clip
        )
    return fit_probability(spec, train.covariates, train.treatment, clip=clip, seed=seed)


def fit_nuisance(
    train: Dataset,
    outcome_spec: LearnerSpec,
    propensity_spec: PropensitySpec,
    clip: float = DEFAULT_CLIP,
    seed: int = 0,
) -> NuisanceFits:
    mu0, mu1 = fit_outcome_models(train, outcome_spec, seed=seed)
    pi = fit_propensity(train, propensity_spec, clip=clip, seed=seed + 2)
    return NuisanceFits(mu0, mu1, pi, clip)
