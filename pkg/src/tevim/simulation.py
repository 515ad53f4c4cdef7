"""Simulation study: data-generating process, true values and Monte Carlo metrics.

DGP on two covariates::

    X1, X2 ~ Uniform(-1, 1)
    A      ~ Bernoulli(expit(-0.4 X1 + 0.1 X1 X2))
    Y      ~ Normal(X1 X2 + 2 X2^2 - X1 + A tau(X), 1)
    tau(X) = X1^2 (X1 + 7/5) + 25 X2^2 / 9
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import expit, roots_legendre

from tevim.crossfit import AlgorithmConfig, derive_seed, run_algorithm
from tevim.data import CovariateSubset, Dataset
from tevim.errors import ConfigurationError, TevimError
from tevim.estimands import TevimEstimate, estimate_psi, split_sample_null_test
from tevim.learners import FLEXIBLE, LearnerSpec
from tevim.nuisance import PropensitySpec
from tevim.pseudo_outcome import aipw_pseudo_outcome

P = 2
SUBSET_1 = CovariateSubset((1,), P, name="X1")
SUBSET_2 = CovariateSubset((2,), P, name="X2")
SIM_SUBSETS = (SUBSET_1, SUBSET_2)
ORACLE = "oracle"
VARIANTS = ("1A", "1B", "2A", "2B")

DESK_N = (500, 2000)
DESK_REPLICATES = 200
FULL_N = (500, 1000, 2000, 3000, 4000)
FULL_REPLICATES = 1000


def true_cate(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    x1, x2 = X[:, 0], X[:, 1]
    return x1**2 * (x1 + 7 / 5) + 25 * x2**2 / 9


def true_propensity(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return expit(-0.4 * X[:, 0] + 0.1 * X[:, 0] * X[:, 1])


def baseline_mean(X) -> np.ndarray:
    """``mu(0, x)``."""
    X = np.asarray(X, dtype=np.float64)
    x1, x2 = X[:, 0], X[:, 1]
    return x1 * x2 + 2 * x2**2 - x1


# Moments of Uniform(-1, 1): E X^2 = 1/3, odd moments vanish.
_E_X2 = 1 / 3
TRUE_ATE_CLOSED_FORM = 7 / 5 * _E_X2 + 25 / 9 * _E_X2


def true_subset_cate(X, subset: CovariateSubset) -> np.ndarray:
    """``E{tau(X) | X_-s}`` in closed form, using the independence of X1 and X2."""
    X = np.asarray(X, dtype=np.float64)
    x1, x2 = X[:, 0], X[:, 1]
    part1 = x1**3 + 7 / 5 * x1**2
    part2 = 25 / 9 * x2**2
    keep1 = 1 not in subset.indices
    keep2 = 2 not in subset.indices
    out = (part1 if keep1 else 7 / 5 * _E_X2) + (part2 if keep2 else 25 / 9 * _E_X2)
    return np.broadcast_to(out, x1.shape).astype(np.float64)


@dataclass(frozen=True, eq=False)
class DgpSample:
    data: Dataset
    tau: np.ndarray
    pi: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray


def generate_dgp(n: int, seed: int = 0) -> DgpSample:
    if n < 2:
        raise ConfigurationError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, P))
    pi = true_propensity(X)
    a = (rng.uniform(size=n) < pi).astype(np.float64)
    tau = true_cate(X)
    mu0 = baseline_mean(X)
    y = mu0 + a * tau + rng.normal(size=n)
    data = Dataset(y, a, X, ("X1", "X2"))
    return DgpSample(data, tau, pi, mu0, mu0 + tau)


def generate_null_dgp(n: int, seed: int = 0) -> DgpSample:
    """Randomized trial where X1 carries no treatment effect heterogeneity.

    ``tau = 1 + X2`` so ``Theta_{1} = 0`` while ``var{tau_{1}(X)} = 1/3 > 0``;
    ``A ~ Bernoulli(0.5)`` independently of X.
    """
    if n < 2:
        raise ConfigurationError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, P))
    pi = np.full(n, 0.5)
    a = (rng.uniform(size=n) < pi).astype(np.float64)
    tau = 1.0 + X[:, 1]
    mu0 = X[:, 0] + X[:, 1] ** 2
    y = mu0 + a * tau + rng.normal(size=n)
    data = Dataset(y, a, X, ("X1", "X2"))
    return DgpSample(data, tau, pi, mu0, mu0 + tau)


@dataclass(frozen=True)
class TrueValues:
    psi1: float
    psi2: float
    ate: float
    vte: float
    theta1: float
    theta2: float
    quadrature_points: int

    @property
    def lambda_bound(self) -> float:
        return self.vte / self.ate**2

    def psi(self, subset: CovariateSubset) -> float:
        return {SUBSET_1: self.psi1, SUBSET_2: self.psi2}[subset]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_bound"] = self.lambda_bound
        return d


def true_values(quadrature_points: int = 1000) -> TrueValues:
    """Tensor-product Gauss-Legendre quadrature of the CATE over ``[-1, 1]^2``.

    Subset CATEs are the 1-d integrals of ``tau`` over the dropped coordinate.
    """
    if quadrature_points < 1000:
        raise ConfigurationError("use at least 1000 quadrature points per axis")
    nodes, weights = roots_legendre(quadrature_points)
    w = weights / 2.0  # uniform density on [-1, 1]
    g1, g2 = np.meshgrid(nodes, nodes, indexing="ij")
    T = true_cate(np.column_stack([g1.ravel(), g2.ravel()])).reshape(g1.shape)
    ate = w @ T @ w
    vte = w @ (T - ate) ** 2 @ w
    tau_drop1 = w @ T  # function of x2
    tau_drop2 = T @ w  # function of x1
    theta1 = vte - w @ (tau_drop1 - ate) ** 2
    theta2 = vte - w @ (tau_drop2 - ate) ** 2
    return TrueValues(
        psi1=float(theta1 / vte),
        psi2=float(theta2 / vte),
        ate=float(ate),
        vte=float(vte),
        theta1=float(theta1),
        theta2=float(theta2),
        quadrature_points=quadrature_points,
    )


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McGrid:
    n_values: tuple[int, ...] = DESK_N
    variants: tuple[str, ...] = ("1A", "2B")
    learners: dict = field(default_factory=lambda: {"ridge": FLEXIBLE})
    folds: int = 5
    clip: float = 0.01

    def __post_init__(self):
        for v in self.variants:
            if v != ORACLE and v not in VARIANTS:
                raise ConfigurationError(f"unknown variant {v!r}")
        if not self.n_values:
            raise ConfigurationError("n_values must be non-empty")


@dataclass(frozen=True)
class McMetrics:
    variant: str
    learner: str
    n: int
    subset: str
    scaled_bias: float
    scaled_variance: float
    coverage: float
    replicates: int
    mean_psi: float = float("nan")
    truth: float = float("nan")
    failures: int = 0


CSV_COLUMNS = (
    "variant",
    "learner",
    "n",
    "subset",
    "scaled_bias",
    "scaled_variance",
    "coverage",
    "replicates",
)


@dataclass
class McResult:
    metrics: list[McMetrics]
    psi_hats: dict  # (variant, learner, n, subset label) -> array of estimates
    failures: dict  # (variant, learner, n) -> list of "replicate: message"

    def cell(self, variant, learner, n, subset) -> McMetrics:
        for m in self.metrics:
            if (m.variant, m.learner, m.n, m.subset) == (variant, learner, n, subset):
                return m
        raise KeyError((variant, learner, n, subset))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for m in self.metrics:
            row = [getattr(m, c) for c in CSV_COLUMNS]
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def aggregate_metrics(
    estimates: list[TevimEstimate], truth: float, n: int, **labels
) -> McMetrics:
    psi = np.array([e.psi for e in estimates])
    r = len(psi)
    if r == 0:
        raise ConfigurationError("no successful replicates to aggregate")
    covered = np.array([e.covers(truth) for e in estimates])
    return McMetrics(
        scaled_bias=float(np.sqrt(n) * (psi.mean() - truth)),
        scaled_variance=float(n * psi.var(ddof=1)) if r > 1 else 0.0,
        coverage=float(covered.mean()),
        replicates=r,
        mean_psi=float(psi.mean()),
        truth=float(truth),
        n=n,
        **labels,
    )


def oracle_estimates(sample: DgpSample) -> dict:
    """TE-VIM estimates with the true nuisances and CATEs plugged in (no fitting)."""
    d = sample.data
    phi = aipw_pseudo_outcome(d.outcome, d.treatment, sample.mu0, sample.mu1, sample.pi)
    tau_p = true_subset_cate(d.covariates, CovariateSubset.full(P))
    return {
        s: estimate_psi(phi, sample.tau, true_subset_cate(d.covariates, s), tau_p, s)
        for s in SIM_SUBSETS
    }


def fitted_estimates(
    sample: DgpSample, variant: str, spec: LearnerSpec, seed: int, folds: int = 5, clip: float = 0.01
) -> dict:
    cfg = AlgorithmConfig.from_name(
        variant,
        folds=folds,
        subsets=SIM_SUBSETS,
        outcome_spec=spec,
        propensity_spec=spec,
        cate_spec=spec,
        subset_spec=spec,
        clip=clip,
        seed=seed,
    )
    est = run_algorithm(sample.data, cfg)
    return {s: estimate_psi(est.phi, est.tau, est.tau_s[s], est.tau_p, s) for s in SIM_SUBSETS}


EstimateFn = Callable[[DgpSample, str, LearnerSpec, int], dict]


def monte_carlo(
    grid: McGrid,
    replicates: int = DESK_REPLICATES,
    master_seed: int = 0,
    threads: int = 1,
    estimate_fn: EstimateFn | None = None,
    truths: TrueValues | None = None,
) -> McResult:
    """Run every (n, variant, learner) cell on the same simulated datasets.

    Replicate ``r`` at sample size ``n`` uses the same data seed for every
    variant and learner. Failed replicates are counted per cell and excluded
    from that cell's metrics.
    """
    if replicates < 1:
        raise ConfigurationError(f"replicates must be >= 1, got {replicates}")
    truths = truths or true_values()
    if estimate_fn is None:

        def estimate_fn(sample, variant, spec, seed):
            if variant == ORACLE:
                return oracle_estimates(sample)
            return fitted_estimates(sample, variant, spec, seed, grid.folds, grid.clip)

    cells = []
    for variant in grid.variants:
        if variant == ORACLE:
            cells.append((ORACLE, ORACLE, None))
        else:
            cells.extend((variant, name, spec) for name, spec in grid.learners.items())

    def run_replicate(task):
        n, r = task
        sample = generate_dgp(n, derive_seed(master_seed, n, r, "data"))
        fit_seed = derive_seed(master_seed, n, r, "fit")
        out = {}
        for variant, name, spec in cells:
            try:
                out[(variant, name)] = estimate_fn(sample, variant, spec, fit_seed)
            except TevimError as err:
                out[(variant, name)] = f"replicate {r}: {type(err).__name__}: {err}"
        return out

    tasks = [(n, r) for n in grid.n_values for r in range(replicates)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_replicate, tasks))
    else:
        results = [run_replicate(t) for t in tasks]

    metrics, psi_hats, failures = [], {}, {}
    for n in grid.n_values:
        per_n = [res for (n_t, _), res in zip(tasks, results) if n_t == n]
        for variant, name, _ in cells:
            outcomes = [res[(variant, name)] for res in per_n]
            errs = [o for o in outcomes if isinstance(o, str)]
            ok = [o for o in outcomes if not isinstance(o, str)]
            failures[(variant, name, n)] = errs
            for s in SIM_SUBSETS:
                ests = [o[s] for o in ok]
                psi_hats[(variant, name, n, s.name)] = np.array([e.psi for e in ests])
                if not ests:
                    continue
                metrics.append(
                    aggregate_metrics(
                        ests,
                        truths.psi(s),
                        n,
                        variant=variant,
                        learner=name,
                        subset=s.name,
                        failures=len(errs),
                    )
                )
    return McResult(metrics, psi_hats, failures)


def null_test_p_values(
    generator: Callable[[int, int], DgpSample],
    n: int,
    replicates: int,
    master_seed: int = 0,
    propensity: PropensitySpec = FLEXIBLE,
    spec: LearnerSpec = FLEXIBLE,
    folds: int = 5,
    threads: int = 1,
) -> np.ndarray:
    """Split-sample test p-values for ``s = {1}`` over repeated draws of ``generator``."""
    base = AlgorithmConfig.from_name(
        "2B",
        folds=folds,
        subsets=(SUBSET_1,),
        outcome_spec=spec,
        propensity_spec=propensity,
        cate_spec=spec,
        subset_spec=spec,
    )

    def one(r):
        sample = generator(n, derive_seed(master_seed, n, r, "data"))
        cfg = replace(base, seed=derive_seed(master_seed, n, r, "fit"))
        return split_sample_null_test(sample.data, cfg)[SUBSET_1].p_value

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, range(replicates))))
    return np.array([one(r) for r in range(replicates)])
