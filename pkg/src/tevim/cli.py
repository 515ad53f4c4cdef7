"""Command-line interface: ``tevim estimate | simulate | truths``.

Settings come from an optional JSON config file (``--config``); command-line
flags override it. Every report embeds the resolved config, the software
version and the learner substitution notice. Execution-only settings
(``threads``, ``out``) are left out so that reports are byte-identical across
thread counts and output locations.

Exit codes: 0 success, 1 numeric/estimation failure, 2 configuration or
schema failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from tevim import __version__
from tevim.analysis import analyze
from tevim.crossfit import ANALYSIS_FOLDS, SIMULATION_FOLDS, AlgorithmConfig
from tevim.data import BINARY, MODES, CovariateSubset, load_csv
from tevim.errors import ConfigurationError, SchemaError, TevimError
from tevim.learners import (
    DEFAULT_CLIP,
    FLEXIBLE,
    BoostedTreesSpec,
    ConstantSpec,
    KNNSpec,
    spec_from_dict,
    spec_to_dict,
)
from tevim.nuisance import KnownConstant
from tevim.simulation import (
    DESK_N,
    DESK_REPLICATES,
    FULL_N,
    FULL_REPLICATES,
    McGrid,
    monte_carlo,
    true_values,
)

SCHEMA_VERSION = 1

LEARNER_NOTICE = (
    "Working models use built-in learners (ridge regression on a standardized polynomial "
    "basis as the smooth flexible default, boosted trees as the tree-ensemble alternative) "
    "in place of GAM, random forest and Super Learner fits."
)
FOLD_NOTICE = "Cross-fitting folds are stratified by treatment arm in binary mode."
WALD_NOTICE = (
    "Wald p-values for TE-VIMs are conservative when the true importance is zero; "
    "the split-sample test is the endorsed test of zero importance."
)
CONTINUOUS_NOTICE = (
    "Continuous mode: 'ate' and 'vte' refer to E{lambda(X)} and var{lambda(X)} with "
    "lambda(x) = cov(A,Y|X=x)/var(A|X=x), estimated as a ratio of regressions; "
    "inference is exploratory."
)

PRESETS = {
    "flexible": FLEXIBLE,
    "knn": KNNSpec(k=20),
    "boosted": BoostedTreesSpec(),
    "constant": ConstantSpec(),
}


# ---------------------------------------------------------------------------
# learner / propensity spec parsing


def _learner(value):
    if isinstance(value, str):
        if value not in PRESETS:
            raise ConfigurationError(f"unknown learner preset {value!r}; choose from {sorted(PRESETS)}")
        return PRESETS[value]
    if isinstance(value, dict):
        return spec_from_dict(value)
    raise ConfigurationError(f"cannot interpret learner {value!r}")


def _propensity(value):
    if isinstance(value, dict) and value.get("kind") == KnownConstant.kind:
        extra = set(value) - {"kind", "value"}
        if extra:
            raise ConfigurationError(f"known_constant: unknown keys {sorted(extra)}")
        return KnownConstant(float(value["value"]))
    if isinstance(value, str) and value.startswith("known:"):
        try:
            return KnownConstant(float(value.split(":", 1)[1]))
        except ValueError:
            raise ConfigurationError(f"cannot parse propensity {value!r}") from None
    return _learner(value)


def _spec_dict(spec) -> dict:
    if isinstance(spec, KnownConstant):
        return {"kind": KnownConstant.kind, "value": spec.value}
    return spec_to_dict(spec)


def parse_subsets(text: str) -> dict:
    """``"age;bio=cd4,cd8"`` -> ``{"age": ["age"], "bio": ["cd4", "cd8"]}``."""
    out = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, cols = part.split("=", 1)
            name = name.strip()
        else:
            name, cols = part, part
        columns = [c.strip() for c in cols.split(",") if c.strip()]
        if not name or not columns:
            raise ConfigurationError(f"malformed subset spec {part!r}")
        if name in out:
            raise ConfigurationError(f"duplicate subset name {name!r}")
        out[name] = columns
    return out


# ---------------------------------------------------------------------------
# run configs


@dataclass
class EstimateConfig:
    data: str | None = None
    outcome: str = "y"
    treatment: str = "a"
    covariates: list | None = None
    mode: str = BINARY
    algorithm: str = "2B"
    folds: int = ANALYSIS_FOLDS
    seed: int = 0
    clip: float = DEFAULT_CLIP
    variance_floor: float = 1e-3
    level: float = 0.95
    subsets: dict | None = None
    learners: dict = field(
        default_factory=lambda: {
            "outcome": "flexible",
            "propensity": "flexible",
            "cate": "flexible",
            "subset": "flexible",
        }
    )
    null_test: bool = False

    def resolved(self) -> dict:
        d = asdict(self)
        d["learners"] = {
            "outcome": spec_to_dict(_learner(self.learners.get("outcome", "flexible"))),
            "propensity": _spec_dict(_propensity(self.learners.get("propensity", "flexible"))),
            "cate": spec_to_dict(_learner(self.learners.get("cate", "flexible"))),
            "subset": spec_to_dict(_learner(self.learners.get("subset", "flexible"))),
        }
        return d


@dataclass
class SimulateConfig:
    n_values: list = field(default_factory=lambda: list(DESK_N))
    variants: list = field(default_factory=lambda: ["1A", "2B"])
    learners: dict = field(default_factory=lambda: {"ridge": "flexible"})
    replicates: int = DESK_REPLICATES
    folds: int = SIMULATION_FOLDS
    clip: float = DEFAULT_CLIP
    seed: int = 0
    quadrature_points: int = 1000

    def resolved(self) -> dict:
        d = asdict(self)
        d["learners"] = {k: spec_to_dict(_learner(v)) for k, v in self.learners.items()}
        return d


@dataclass
class TruthsConfig:
    quadrature_points: int = 1000


def _load_config(cls, path, overrides: dict):
    values = {}
    if path:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise SchemaError(f"config file {path} not found") from None
        except json.JSONDecodeError as err:
            raise SchemaError(f"config file {path} is not valid JSON: {err}") from None
        if not isinstance(values, dict):
            raise SchemaError("config file must hold a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise SchemaError(f"unknown config keys {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _header(command: str, config: dict) -> dict:
    header = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "software": {"name": "tevim", "version": __version__},
        "config": config,
    }
    if "seed" in config:
        header["seed"] = config["seed"]
    return header


# ---------------------------------------------------------------------------
# commands


def build_algorithm_config(cfg: EstimateConfig, covariate_names) -> AlgorithmConfig:
    if cfg.subsets is None:
        named = {c: [c] for c in covariate_names}
    else:
        named = cfg.subsets
    subsets = tuple(
        CovariateSubset.from_names(cols, covariate_names, name=name) for name, cols in named.items()
    )
    learners = cfg.learners
    return AlgorithmConfig.from_name(
        cfg.algorithm,
        folds=cfg.folds,
        subsets=subsets,
        outcome_spec=_learner(learners.get("outcome", "flexible")),
        propensity_spec=_propensity(learners.get("propensity", "flexible")),
        cate_spec=_learner(learners.get("cate", "flexible")),
        subset_spec=_learner(learners.get("subset", "flexible")),
        clip=cfg.clip,
        variance_floor=cfg.variance_floor,
        seed=cfg.seed,
    )


def estimate_report(cfg: EstimateConfig, threads: int = 1) -> tuple[dict, str]:
    """Run an analysis and return the JSON report and the companion CSV table."""
    if cfg.data is None:
        raise ConfigurationError("no input data: pass --data or set 'data' in the config")
    if cfg.mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    try:
        data = load_csv(cfg.data, cfg.outcome, cfg.treatment, cfg.covariates, cfg.mode)
    except FileNotFoundError:
        raise SchemaError(f"data file {cfg.data} not found") from None
    algo = build_algorithm_config(cfg, data.covariate_names)
    result = analyze(data, algo, null_test=cfg.null_test, level=cfg.level, threads=threads)
    names = data.covariate_names

    warnings = list(result.warnings)
    for t in result.tevims:
        warnings.extend(f"{t.subset.label(names)}: {flag}" for flag in t.flags)
    notices = [LEARNER_NOTICE, FOLD_NOTICE, WALD_NOTICE]
    if cfg.mode != BINARY:
        notices.append(CONTINUOUS_NOTICE)

    report = _header("estimate", cfg.resolved())
    report.update(
        {
            "notices": notices,
            "algorithm": algo.name,
            "n": data.n,
            "p": data.p,
            "mode": cfg.mode,
            "ate": result.ate.to_dict(),
            "ate_regression": result.ate_regression,
            "vte": result.vte.to_dict(),
            "root_vte": result.root_vte.to_dict(),
            "lambda_bound": result.lambda_bound.to_dict() if result.lambda_bound else None,
            "tevims": [t.to_dict(names) for t in result.tevims],
            "null_tests": [r.to_dict(names) for r in result.null_tests.values()],
            "warnings": warnings,
        }
    )

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["subset", "psi", "se", "ci_lo", "ci_hi", "ci_trunc_lo", "ci_trunc_hi",
         "p_value_wald", "theta_s", "theta_p", "flags"]
    )
    for t in result.tevims:
        lo, hi = t.ci_raw
        tlo, thi = t.ci_truncated
        writer.writerow(
            [t.subset.label(names)]
            + [repr(float(v)) for v in (t.psi, t.se, lo, hi, tlo, thi, t.p_value_wald, t.theta_s, t.theta_p)]
            + [";".join(t.flags)]
        )
    return report, buf.getvalue()


def simulate_outputs(cfg: SimulateConfig, threads: int = 1) -> tuple[dict, str]:
    learners = {name: _learner(v) for name, v in cfg.learners.items()}
    grid = McGrid(
        n_values=tuple(int(n) for n in cfg.n_values),
        variants=tuple(cfg.variants),
        learners=learners,
        folds=cfg.folds,
        clip=cfg.clip,
    )
    truths = true_values(cfg.quadrature_points)
    result = monte_carlo(grid, cfg.replicates, cfg.seed, threads=threads, truths=truths)
    summary = _header("simulate", cfg.resolved())
    summary.update(
        {
            "notices": [LEARNER_NOTICE, FOLD_NOTICE],
            "truths": truths.to_dict(),
            "metrics": [asdict(m) for m in result.metrics],
            "failures": {
                f"{v}|{l}|{n}": msgs for (v, l, n), msgs in result.failures.items() if msgs
            },
        }
    )
    return summary, result.to_csv()


def truths_report(cfg: TruthsConfig) -> dict:
    tv = true_values(cfg.quadrature_points)
    doubled = true_values(2 * cfg.quadrature_points)
    change = max(
        abs(getattr(tv, k) - getattr(doubled, k)) for k in ("psi1", "psi2", "ate", "vte")
    )
    report = _header("truths", asdict(cfg))
    report.update(
        {
            "values": tv.to_dict(),
            "rounded": {
                "psi1": round(tv.psi1, 2),
                "psi2": round(tv.psi2, 2),
                "ate": round(tv.ate, 2),
                "vte": round(tv.vte, 2),
                "lambda_bound": round(tv.lambda_bound, 3),
            },
            "quadrature": {
                "rule": "tensor-product Gauss-Legendre on [-1,1]^2",
                "points_per_axis": cfg.quadrature_points,
                "max_change_at_double_resolution": change,
            },
        }
    )
    return report


def _write(out: str | None, files: dict) -> None:
    if out is None:
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="tevim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tevim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common], help="TE-VIMs for a CSV dataset")
    est.add_argument("--data", help="input CSV")
    est.add_argument("--outcome")
    est.add_argument("--treatment")
    est.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    est.add_argument("--algorithm", choices=["1A", "1B", "2A", "2B"])
    est.add_argument("--folds", type=int)
    est.add_argument("--clip", type=float)
    est.add_argument("--subsets", help="'name=col1,col2;col3' (default: each covariate singly)")
    est.add_argument("--mode", choices=list(MODES))
    est.add_argument("--learner", choices=sorted(PRESETS), help="preset for every regression")
    est.add_argument("--propensity", help="preset name or 'known:<p>' for a fixed propensity")
    est.add_argument("--level", type=float)
    est.add_argument("--null-test", action="store_true", default=None)

    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo study on the simulation DGP")
    sim.add_argument("--n", type=int, nargs="+", dest="n_values")
    sim.add_argument("--variants", nargs="+", choices=["1A", "1B", "2A", "2B", "oracle"])
    sim.add_argument("--learner", choices=sorted(PRESETS), help="single learner preset")
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--folds", type=int)
    sim.add_argument("--clip", type=float)
    sim.add_argument("--full-grid", action="store_true", help="full grid: 5 sample sizes, 1000 replicates")

    tru = sub.add_parser("truths", parents=[common], help="true estimand values by quadrature")
    tru.add_argument("--points", type=int, dest="quadrature_points")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")

    if args.command == "estimate":
        overrides = {
            "data": args.data,
            "outcome": args.outcome,
            "treatment": args.treatment,
            "covariates": args.covariates.split(",") if args.covariates else None,
            "algorithm": args.algorithm,
            "folds": args.folds,
            "seed": args.seed,
            "clip": args.clip,
            "mode": args.mode,
            "level": args.level,
            "subsets": parse_subsets(args.subsets) if args.subsets else None,
            "null_test": args.null_test,
        }
        cfg = _load_config(EstimateConfig, args.config, overrides)
        if args.learner:
            cfg.learners = {k: args.learner for k in ("outcome", "propensity", "cate", "subset")}
        if args.propensity:
            cfg.learners = {**cfg.learners, "propensity": args.propensity}
        report, table = estimate_report(cfg, threads=args.threads)
        _write(args.out, {"report.json": _dumps(report), "report.csv": table})
        text = _dumps(report)

    elif args.command == "simulate":
        overrides = {
            "n_values": args.n_values,
            "variants": args.variants,
            "replicates": args.replicates,
            "folds": args.folds,
            "clip": args.clip,
            "seed": args.seed,
        }
        if args.full_grid:
            overrides["n_values"] = list(FULL_N)
            overrides["replicates"] = FULL_REPLICATES
            overrides["variants"] = args.variants or ["1A", "1B", "2A", "2B"]
        cfg = _load_config(SimulateConfig, args.config, overrides)
        if args.learner:
            cfg.learners = {args.learner: args.learner}
        summary, table = simulate_outputs(cfg, threads=args.threads)
        _write(args.out, {"summary.json": _dumps(summary), "metrics.csv": table})
        text = table

    else:
        cfg = _load_config(TruthsConfig, args.config, {"quadrature_points": args.quadrature_points})
        report = truths_report(cfg)
        _write(args.out, {"truths.json": _dumps(report)})
        text = _dumps(report)

    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except TevimError as err:
        payload = {"error": {"type": type(err).__name__, "message": str(err), "exit_code": err.exit_code}}
        sys.stderr.write(json.dumps(payload) + "\n")
        return err.exit_code
    except TypeError as err:
        # bad config value types surface from dataclass construction
        payload = {"error": {"type": "ConfigurationError", "message": str(err), "exit_code": 2}}
        sys.stderr.write(json.dumps(payload) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
