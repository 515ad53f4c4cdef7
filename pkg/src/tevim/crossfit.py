"""Fold construction and the no-split / cross-fitted estimation algorithms.

Both algorithms share one code path: :func:`fit_fold` fits every working
model on a set of training rows and returns a :class:`FoldModels` bundle that
evaluates them on any rows. Without splitting, the training rows are all rows
and predictions are in-sample. With cross-fitting, each fold is predicted by
the bundle fitted on the other folds.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from tevim.cate import CateModel, SubsetCateModel, dr_learner, subset_cate, t_learner
from tevim.continuous import DEFAULT_VARIANCE_FLOOR, fit_continuous_nuisance
from tevim.data import BINARY, CovariateSubset, Dataset, drop_columns
from tevim.errors import ConfigurationError, TevimError
from tevim.learners import DEFAULT_CLIP, FLEXIBLE, LearnerSpec
from tevim.nuisance import PropensitySpec, fit_nuisance

VARIANT_T = "A"
VARIANT_DR = "B"
SIMULATION_FOLDS = 5
ANALYSIS_FOLDS = 20


def derive_seed(master: int, *keys) -> int:
    """Mix a master seed with integer or string keys into a 63-bit seed."""
    entropy = [int(master) % 2**64]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key) % 2**64)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray  # values in 1..K
    K: int

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)


def make_folds(n: int, K: int, treatment=None, seed: int = 0) -> FoldAssignment:
    """Random K-fold partition, stratified by treatment arm when ``treatment`` is given.

    Within each arm fold sizes differ by at most one; the second arm starts
    where the first stopped, so overall sizes also differ by at most one.
    """
    if int(K) != K or K < 2:
        raise ConfigurationError(f"need at least 2 folds, got {K}")
    if K > n:
        raise ConfigurationError(f"{K} folds requested for only {n} rows")
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    fold_of = np.zeros(n, dtype=np.int64)
    if treatment is None:
        strata = [np.arange(n)]
    else:
        treatment = np.asarray(treatment)
        if len(treatment) != n:
            raise ConfigurationError("treatment vector does not match n")
        strata = [np.flatnonzero(treatment == arm) for arm in (0, 1)]
        for arm, idx in enumerate(strata):
            if len(idx) < K:
                raise ConfigurationError(
                    f"treatment arm {arm} has {len(idx)} members, fewer than K={K} folds; "
                    "use fewer folds"
                )
    offset = 0
    for idx in strata:
        perm = rng.permutation(idx)
        fold_of[perm] = (np.arange(len(perm)) + offset) % K + 1
        offset = (offset + len(perm)) % K
    return FoldAssignment(fold_of, int(K))


@dataclass(frozen=True)
class AlgorithmConfig:
    """Settings for one run of the estimation algorithm.

    ``split=False`` is Algorithm 1 (no sample splitting); ``split=True`` is
    Algorithm 2 with ``folds``-fold cross-fitting. ``cate_variant`` is ``"A"``
    (T-learner, or ``lambda`` directly in continuous mode) or ``"B"``
    (DR-learner). The full covariate set is always processed.
    """

    split: bool = True
    folds: int = SIMULATION_FOLDS
    cate_variant: str = VARIANT_DR
    subsets: tuple[CovariateSubset, ...] = ()
    outcome_spec: LearnerSpec = FLEXIBLE
    propensity_spec: PropensitySpec = FLEXIBLE
    cate_spec: LearnerSpec = FLEXIBLE
    subset_spec: LearnerSpec = FLEXIBLE
    clip: float = DEFAULT_CLIP
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.cate_variant not in (VARIANT_T, VARIANT_DR):
            raise ConfigurationError(f"cate_variant must be 'A' or 'B', got {self.cate_variant!r}")
        if self.split and (int(self.folds) != self.folds or self.folds < 2):
            raise ConfigurationError(f"need at least 2 folds, got {self.folds}")
        if not 0 < self.clip < 0.5:
            raise ConfigurationError(f"clip must lie in (0, 0.5), got {self.clip}")
        subsets = tuple(self.subsets)
        if len(set(subsets)) != len(subsets):
            raise ConfigurationError("subsets must be distinct")
        object.__setattr__(self, "subsets", subsets)

    @property
    def name(self) -> str:
        return ("2" if self.split else "1") + self.cate_variant

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "AlgorithmConfig":
        """``"1A"``, ``"1B"``, ``"2A"`` or ``"2B"``."""
        if len(name) != 2 or name[0] not in "12" or name[1] not in "AB":
            raise ConfigurationError(f"unknown algorithm {name!r}; expected 1A, 1B, 2A or 2B")
        return cls(split=name[0] == "2", cate_variant=name[1], **kwargs)

    def with_subsets(self, subsets: Sequence[CovariateSubset]) -> "AlgorithmConfig":
        return replace(self, subsets=tuple(subsets))

    def all_subsets(self, p: int) -> tuple[CovariateSubset, ...]:
        full = CovariateSubset.full(p)
        return tuple(s for s in self.subsets if s != full) + (full,)


@dataclass(frozen=True, eq=False)
class PerObservationEstimates:
    """Per-row ``phi``, ``tau``, ``tau_s`` (one vector per subset) and ``tau_p``."""

    phi: np.ndarray
    tau: np.ndarray
    tau_s: dict
    tau_p: np.ndarray
    folds: FoldAssignment | None = None
    subsets: tuple[CovariateSubset, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.phi)


@dataclass(frozen=True)
class FoldModels:
    nuisance: object
    cate: CateModel
    subset_models: tuple[SubsetCateModel, ...]

    def predict(self, y, a, X):
        """``(phi, tau, {subset: tau_s}, tau_p)`` at the given rows."""
        phi = self.nuisance.pseudo_outcomes(y, a, X)
        tau = self.cate.predict(X)
        tau_s = {m.subset: m.predict(X) for m in self.subset_models}
        full = self.subset_models[-1]
        return phi, tau, tau_s, tau_s[full.subset]


NuisanceFactory = Callable[[Dataset, int], object]


def _default_nuisance(train: Dataset, cfg: AlgorithmConfig, seed: int):
    if train.mode == BINARY:
        return fit_nuisance(train, cfg.outcome_spec, cfg.propensity_spec, cfg.clip, seed)
    return fit_continuous_nuisance(
        train, cfg.outcome_spec, cfg.propensity_spec, cfg.variance_floor, seed
    )


def fit_fold(
    data: Dataset,
    train_rows,
    cfg: AlgorithmConfig,
    fold_index: int = 0,
    nuisance_factory: NuisanceFactory | None = None,
) -> FoldModels:
    """Fit every working model on ``train_rows`` (steps 1-4 of either algorithm)."""
    train = data.take(train_rows)
    X = train.covariates
    seed = derive_seed(cfg.seed, fold_index, "nuisance")
    if nuisance_factory is None:
        nz = _default_nuisance(train, cfg, seed)
    else:
        nz = nuisance_factory(train, seed)

    if cfg.cate_variant == VARIANT_T:
        if hasattr(nz, "mu1"):
            cate = t_learner(nz)
        else:
            cate = CateModel("lambda", (nz.lambda_x,))
    else:
        phi_train = nz.pseudo_outcomes(train.outcome, train.treatment, X)
        cate = dr_learner(phi_train, X, cfg.cate_spec, seed=derive_seed(cfg.seed, fold_index, "cate"))
    tau_train = cate.predict(X)

    subset_models = []
    for j, s in enumerate(cfg.all_subsets(data.p)):
        subset_models.append(
            subset_cate(
                tau_train,
                drop_columns(X, s),
                s,
                cfg.subset_spec,
                seed=derive_seed(cfg.seed, fold_index, "subset", j),
            )
        )
    return FoldModels(nz, cate, tuple(subset_models))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_algorithm(
    data: Dataset,
    cfg: AlgorithmConfig,
    folds: FoldAssignment | None = None,
    nuisance_factory: NuisanceFactory | None = None,
    threads: int = 1,
) -> PerObservationEstimates:
    subsets = cfg.all_subsets(data.p)
    n = data.n
    y, a, X = data.outcome, data.treatment, data.covariates

    if not cfg.split:
        models = fit_fold(data, np.arange(n), cfg, 0, nuisance_factory)
        phi, tau, tau_s, tau_p = models.predict(y, a, X)
        return PerObservationEstimates(phi, tau, tau_s, tau_p, None, subsets)

    if folds is None:
        strat = a if data.mode == BINARY else None
        folds = make_folds(n, cfg.folds, strat, seed=cfg.seed)
    elif folds.n != n:
        raise ConfigurationError(f"fold assignment covers {folds.n} rows, data has {n}")

    def one_fold(k):
        test = folds.rows(k)
        try:
            models = fit_fold(data, np.flatnonzero(folds.fold_of != k), cfg, k, nuisance_factory)
            return test, models.predict(y[test], a[test], X[test])
        except TevimError as err:
            raise type(err)(f"fold {k}: {err}") from err

    phi, tau, tau_p = np.empty(n), np.empty(n), np.empty(n)
    tau_s = {s: np.empty(n) for s in subsets}
    for test, (phi_k, tau_k, tau_s_k, tau_p_k) in _map(one_fold, range(1, folds.K + 1), threads):
        phi[test], tau[test], tau_p[test] = phi_k, tau_k, tau_p_k
        for s in subsets:
            tau_s[s][test] = tau_s_k[s]
    return PerObservationEstimates(phi, tau, tau_s, tau_p, folds, subsets)
