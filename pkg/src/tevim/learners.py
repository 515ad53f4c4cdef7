"""Regression learners used for every nuisance and CATE fit.

Four learners are built in: k-nearest neighbours, ridge regression on a
standardized polynomial basis (logistic link for probabilities), gradient
boosted regression trees, and the constant (training mean) learner.

All learners sort training rows into a canonical order before fitting, which
makes the fit a function of the *set* of training rows: permuting rows gives
bit-identical predictions.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy.special import expit, logit

from tevim.errors import ConfigurationError, NumericError, ValidationError

DEFAULT_CLIP = 0.01


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class KNNSpec:
    kind: ClassVar[str] = "knn"
    k: int = 10

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"knn: k must be a positive integer, got {self.k}")


@dataclass(frozen=True)
class RidgeBasisSpec:
    kind: ClassVar[str] = "ridge_basis"
    degree: int = 3
    include_interactions: bool = True
    penalty: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigurationError(f"ridge_basis: degree must be >= 1, got {self.degree}")
        if not np.isfinite(self.penalty) or self.penalty < 0:
            raise ConfigurationError(f"ridge_basis: penalty must be >= 0, got {self.penalty}")


@dataclass(frozen=True)
class BoostedTreesSpec:
    kind: ClassVar[str] = "boosted_trees"
    rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 10
    subsample_fraction: float = 1.0

    def __post_init__(self):
        if int(self.rounds) != self.rounds or self.rounds < 0:
            raise ConfigurationError(f"boosted_trees: rounds must be >= 0, got {self.rounds}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ConfigurationError(f"boosted_trees: max_depth must be >= 1, got {self.max_depth}")
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError(
                f"boosted_trees: learning_rate must be in (0, 1], got {self.learning_rate}"
            )
        if int(self.min_leaf) != self.min_leaf or self.min_leaf < 1:
            raise ConfigurationError(f"boosted_trees: min_leaf must be >= 1, got {self.min_leaf}")
        if not 0 < self.subsample_fraction <= 1:
            raise ConfigurationError(
                "boosted_trees: subsample_fraction must be in (0, 1], "
                f"got {self.subsample_fraction}"
            )


@dataclass(frozen=True)
class ConstantSpec:
    kind: ClassVar[str] = "constant"


LearnerSpec = Union[KNNSpec, RidgeBasisSpec, BoostedTreesSpec, ConstantSpec]

_SPEC_TYPES = {cls.kind: cls for cls in (KNNSpec, RidgeBasisSpec, BoostedTreesSpec, ConstantSpec)}

#: The smooth flexible default, standing in for a GAM with interactions.
FLEXIBLE = RidgeBasisSpec(degree=3, include_interactions=True, penalty=1.0)


def spec_to_dict(spec: LearnerSpec) -> dict:
    return {"kind": spec.kind, **asdict(spec)}


def spec_from_dict(d: dict) -> LearnerSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _SPEC_TYPES:
        raise ConfigurationError(f"unknown learner kind {kind!r}; expected one of {sorted(_SPEC_TYPES)}")
    cls = _SPEC_TYPES[kind]
    allowed = set(cls.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"{kind}: unknown hyperparameters {sorted(unknown)}")
    return cls(**d)


def spec_label(spec: LearnerSpec) -> str:
    params = ",".join(f"{k}={v}" for k, v in asdict(spec).items())
    return f"{spec.kind}({params})"


# ---------------------------------------------------------------------------
# fitted models


@dataclass(frozen=True, eq=False)
class FittedModel:
    feature_count: int
    is_probability: bool = field(default=False, kw_only=True)
    clip: float | None = field(default=None, kw_only=True)

    def predict(self, features) -> np.ndarray:
        X = _as_matrix(features)
        if X.shape[1] != self.feature_count:
            raise ValidationError(
                f"model expects {self.feature_count} features, got {X.shape[1]}"
            )
        out = self._predict(X)
        if self.is_probability:
            out = np.clip(out, self.clip, 1.0 - self.clip)
        if not np.all(np.isfinite(out)):
            raise NumericError("learner produced non-finite predictions")
        return out

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantModel(FittedModel):
    value: float = 0.0

    def _predict(self, X):
        return np.full(X.shape[0], self.value)


@dataclass(frozen=True, eq=False)
class KNNModel(FittedModel):
    train_X: np.ndarray = None
    train_y: np.ndarray = None
    k: int = 1

    def _predict(self, X):
        out = np.empty(X.shape[0])
        # bound the (chunk x n x q) difference tensor at ~4M entries
        chunk = max(1, 4_000_000 // max(1, self.train_X.shape[0] * self.feature_count))
        for start in range(0, X.shape[0], chunk):
            block = X[start : start + chunk]
            d2 = ((block[:, None, :] - self.train_X[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[start : start + chunk] = self.train_y[nearest].mean(axis=1)
        return out


@dataclass(frozen=True, eq=False)
class PolynomialBasis:
    """Monomial expansion of ``q`` inputs, standardized with training moments."""

    exponents: np.ndarray  # (n_terms, q)
    center: np.ndarray
    scale: np.ndarray

    @staticmethod
    def exponent_table(q: int, degree: int, interactions: bool) -> np.ndarray:
        rows = []
        for total in range(1, degree + 1):
            if interactions:
                for combo in itertools.combinations_with_replacement(range(q), total):
                    e = [0] * q
                    for j in combo:
                        e[j] += 1
                    rows.append(e)
            else:
                for j in range(q):
                    e = [0] * q
                    e[j] = total
                    rows.append(e)
        return np.array(rows, dtype=np.int64).reshape(-1, q)

    @staticmethod
    def raw(X: np.ndarray, exponents: np.ndarray) -> np.ndarray:
        F = np.ones((X.shape[0], exponents.shape[0]))
        for t, e in enumerate(exponents):
            for j in np.flatnonzero(e):
                F[:, t] *= X[:, j] ** e[j]
        return F

    @classmethod
    def fit(cls, X, degree, interactions) -> tuple["PolynomialBasis", np.ndarray]:
        exps = cls.exponent_table(X.shape[1], degree, interactions)
        F = cls.raw(X, exps)
        center = F.mean(axis=0)
        scale = F.std(axis=0)
        scale[scale <= 1e-12 * np.maximum(1.0, np.abs(center))] = 1.0
        basis = cls(exps, center, scale)
        return basis, (F - center) / scale

    def transform(self, X):
        return (self.raw(X, self.exponents) - self.center) / self.scale


@dataclass(frozen=True, eq=False)
class RidgeModel(FittedModel):
    basis: PolynomialBasis = None
    intercept: float = 0.0
    coef: np.ndarray = None
    logistic: bool = False

    def _predict(self, X):
        eta = self.intercept + self.basis.transform(X) @ self.coef
        return expit(eta) if self.logistic else eta


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            rows = np.flatnonzero(internal)
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])


@dataclass(frozen=True, eq=False)
class BoostedModel(FittedModel):
    base_score: float = 0.0
    learning_rate: float = 0.1
    trees: tuple = ()
    logistic: bool = False

    def _predict(self, X):
        eta = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            eta = eta + self.learning_rate * tree.predict(X)
        return expit(eta) if self.logistic else eta


# ---------------------------------------------------------------------------
# fitting


def _as_matrix(features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValidationError(f"features must be a 2-d matrix, got shape {X.shape}")
    return X


def _check_inputs(features, targets) -> tuple[np.ndarray, np.ndarray]:
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
    if y.shape[0] < 1:
        raise ConfigurationError("cannot fit a learner on zero rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("learner inputs must be finite")
    return X, y


def _canonical(X, y):
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    return X[order], y[order]


def _ridge_coef(Z, r, penalty):
    d = Z.shape[1]
    if penalty > 0:
        Z = np.vstack([Z, np.sqrt(penalty) * np.eye(d)])
        r = np.concatenate([r, np.zeros(d)])
    coef, *_ = np.linalg.lstsq(Z, r, rcond=None)
    return coef


def _fit_logistic(Z, y, penalty, max_iter=100, tol=1e-10):
    """Penalized IRLS with step halving; the intercept is not penalized."""
    n, d = Z.shape
    Za = np.column_stack([np.ones(n), Z])
    pen = np.full(d + 1, float(penalty))
    pen[0] = 0.0
    ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    beta = np.zeros(d + 1)
    beta[0] = logit(ybar)

    def objective(b):
        eta = Za @ b
        # -loglik = sum log(1 + e^eta) - y*eta
        return np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.sum(pen * b * b)

    current = objective(beta)
    for _ in range(max_iter):
        prob = expit(Za @ beta)
        w = prob * (1 - prob)
        grad = Za.T @ (prob - y) + pen * beta
        hess = (Za * w[:, None]).T @ Za + np.diag(pen)
        hess[np.diag_indices_from(hess)] += 1e-10
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            candidate = beta - t * step
            value = objective(candidate)
            if value <= current or t < 1e-8:
                break
            t *= 0.5
        beta, previous, current = candidate, current, value
        if np.max(np.abs(t * step)) < tol or abs(previous - current) < tol * (1 + abs(current)):
            break
    return beta[0], beta[1:]


def _build_tree(X, orders, g, h, rows_mask, spec: BoostedTreesSpec, reg):
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def grow(mask, depth):
        node = new_node()
        G, H = g[mask].sum(), h[mask].sum()
        value[node] = -G / (H + reg)
        count = int(mask.sum())
        if depth >= spec.max_depth or count < 2 * spec.min_leaf:
            return node
        parent_score = G * G / (H + reg)
        best = (1e-12, -1, 0.0)
        for j, order in enumerate(orders):
            idx = order[mask[order]]
            xs = X[idx, j]
            GL = np.cumsum(g[idx])[:-1]
            HL = np.cumsum(h[idx])[:-1]
            nl = np.arange(1, count)
            ok = (xs[:-1] < xs[1:]) & (nl >= spec.min_leaf) & (count - nl >= spec.min_leaf)
            if not ok.any():
                continue
            gain = GL**2 / (HL + reg) + (G - GL) ** 2 / (H - HL + reg) - parent_score
            gain = np.where(ok, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best[0]:
                thr = 0.5 * (xs[i] + xs[i + 1])
                if not xs[i] <= thr < xs[i + 1]:
                    thr = xs[i]
                best = (gain[i], j, thr)
        _, j, thr = best
        if j < 0:
            return node
        go_left = mask & (X[:, j] <= thr)
        feature[node] = j
        threshold[node] = thr
        left[node] = grow(go_left, depth + 1)
        right[node] = grow(mask & ~go_left, depth + 1)
        return node

    grow(rows_mask, 0)
    return Tree(
        np.array(feature, dtype=np.intp),
        np.array(threshold),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value),
    )


def _fit_boosted(X, y, spec: BoostedTreesSpec, seed, logistic, clip):
    n, q = X.shape
    if logistic:
        base = float(logit(np.clip(y.mean(), clip, 1 - clip)))
        reg = 1.0
    else:
        base = float(y.mean())
        reg = 0.0
    rng = np.random.default_rng(seed)
    orders = [np.argsort(X[:, j], kind="stable") for j in range(q)]
    eta = np.full(n, base)
    trees = []
    n_sub = max(1, int(round(spec.subsample_fraction * n)))
    for _ in range(spec.rounds):
        if logistic:
            prob = expit(eta)
            g, h = prob - y, np.maximum(prob * (1 - prob), 1e-12)
        else:
            g, h = eta - y, np.ones(n)
        mask = np.zeros(n, dtype=bool)
        if n_sub < n:
            mask[rng.choice(n, size=n_sub, replace=False)] = True
        else:
            mask[:] = True
        tree = _build_tree(X, orders, g, h, mask, spec, reg)
        trees.append(tree)
        eta = eta + spec.learning_rate * tree.predict(X)
    return BoostedModel(
        q,
        base_score=base,
        learning_rate=spec.learning_rate,
        trees=tuple(trees),
        logistic=logistic,
        is_probability=logistic,
        clip=clip if logistic else None,
    )


def _fit(spec: LearnerSpec, X, y, seed, probability, clip):
    n, q = X.shape
    if q == 0 or isinstance(spec, ConstantSpec):
        return ConstantModel(q, value=float(y.mean()), is_probability=probability, clip=clip)
    X, y = _canonical(X, y)
    if isinstance(spec, KNNSpec):
        if spec.k > n:
            raise ConfigurationError(f"knn: k={spec.k} exceeds the {n} training rows")
        return KNNModel(
            q, train_X=X, train_y=y, k=int(spec.k), is_probability=probability, clip=clip
        )
    if isinstance(spec, RidgeBasisSpec):
        basis, Z = PolynomialBasis.fit(X, spec.degree, spec.include_interactions)
        if probability:
            intercept, coef = _fit_logistic(Z, y, spec.penalty)
        else:
            intercept = float(y.mean())
            coef = _ridge_coef(Z, y - intercept, spec.penalty)
        return RidgeModel(
            q,
            basis=basis,
            intercept=float(intercept),
            coef=coef,
            logistic=probability,
            is_probability=probability,
            clip=clip,
        )
    if isinstance(spec, BoostedTreesSpec):
        return _fit_boosted(X, y, spec, seed, probability, clip)
    raise ConfigurationError(f"unsupported learner spec {spec!r}")


def fit(spec: LearnerSpec, features, targets, seed: int = 0) -> FittedModel:
    """Fit a regression of ``targets`` on ``features``.

    A zero-column feature matrix always yields the constant (mean) model.
    """
    X, y = _check_inputs(features, targets)
    return _fit(spec, X, y, seed, probability=False, clip=None)


def fit_probability(
    spec: LearnerSpec, features, binary_targets, clip: float = DEFAULT_CLIP, seed: int = 0
) -> FittedModel:
    """Fit ``P(target = 1 | features)``; predictions are clipped to ``[clip, 1 - clip]``."""
    if not 0 < clip < 0.5:
        raise ConfigurationError(f"clip must lie in (0, 0.5), got {clip}")
    X, y = _check_inputs(features, binary_targets)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("probability targets must be 0/1")
    if not isinstance(spec, ConstantSpec) and X.shape[1] > 0 and (y.min() == y.max()):
        raise ValidationError("probability learner needs both classes in the training data")
    return _fit(spec, X, y, seed, probability=True, clip=clip)


def predict(model: FittedModel, features) -> np.ndarray:
    return model.predict(features)
