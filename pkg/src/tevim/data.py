"""Dataset container, covariate subsets and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tevim.errors import ParseError, SchemaError, ValidationError

BINARY = "binary"
CONTINUOUS = "continuous"
MODES = (BINARY, CONTINUOUS)


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed data ``(Y, A, X)`` for ``n`` units.

    Arrays are copied on construction and made read-only, so a dataset can be
    shared between threads.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    mode: str = BINARY

    def __post_init__(self):
        y = _frozen_array(self.outcome, 1)
        a = _frozen_array(self.treatment, 1)
        x = np.asarray(self.covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        x = _frozen_array(x, 2)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "covariates", x)

        n, p = x.shape
        if len(y) != n or len(a) != n:
            raise ValidationError(
                f"length mismatch: outcome {len(y)}, treatment {len(a)}, covariates {n}"
            )
        if n < 2:
            raise ValidationError(f"need at least 2 observations, got {n}")
        if p < 1:
            raise ValidationError("need at least one covariate")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ValidationError(f"{len(names)} covariate names for {p} columns")
        if len(set(names)) != p:
            raise ValidationError("covariate names must be distinct")
        object.__setattr__(self, "covariate_names", names)

        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        for label, arr in (("outcome", y), ("treatment", a), ("covariates", x)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {label}")
        if self.mode == BINARY:
            if not np.all((a == 0.0) | (a == 1.0)):
                raise ValidationError("binary mode requires treatment values in {0, 1}")
            n_treated = int(a.sum())
            if n_treated == 0 or n_treated == n:
                raise ValidationError("binary mode requires both treatment arms to be non-empty")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.outcome[rows],
            self.treatment[rows],
            self.covariates[rows],
            self.covariate_names,
            self.mode,
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.covariates, other.covariates)
        )

    __hash__ = None


@dataclass(frozen=True)
class CovariateSubset:
    """A subset ``s`` of the covariate indices ``{1, ..., p}`` (1-based).

    ``name`` is a display label only and takes no part in equality.
    """

    indices: tuple[int, ...]
    p: int
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError(f"p must be positive, got {self.p}")
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValidationError(f"duplicate indices in subset {self.indices}")
        for i in idx:
            if not 1 <= i <= self.p:
                raise ValidationError(f"subset index {i} outside [1, {self.p}]")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, p: int) -> "CovariateSubset":
        return cls(tuple(range(1, p + 1)), p, name="all")

    @classmethod
    def from_names(cls, names: Iterable[str], covariate_names: Sequence[str], name=None):
        lookup = {c: j + 1 for j, c in enumerate(covariate_names)}
        idx = []
        for c in names:
            if c not in lookup:
                raise SchemaError(f"unknown covariate {c!r}")
            idx.append(lookup[c])
        return cls(tuple(idx), len(covariate_names), name=name)

    @property
    def is_full(self) -> bool:
        return len(self.indices) == self.p

    def complement(self) -> tuple[int, ...]:
        return tuple(j for j in range(1, self.p + 1) if j not in self.indices)

    def kept_columns(self) -> np.ndarray:
        """0-based column positions of ``X_{-s}``."""
        return np.array([j - 1 for j in self.complement()], dtype=np.intp)

    def label(self, covariate_names: Sequence[str] | None = None) -> str:
        if self.name:
            return self.name
        if covariate_names is not None:
            return "+".join(covariate_names[i - 1] for i in self.indices)
        return "{" + ",".join(str(i) for i in self.indices) + "}"


def drop_columns(X: np.ndarray, s: CovariateSubset) -> np.ndarray:
    """Return ``X_{-s}``: the columns of ``X`` whose 1-based index is not in ``s``."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != s.p:
        raise ValidationError(f"matrix with shape {X.shape} does not match subset over p={s.p}")
    return X[:, s.kept_columns()]


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    covariate_cols: Sequence[str] | None = None,
    mode: str = BINARY,
) -> Dataset:
    """Read a header-first CSV file into a :class:`Dataset`.

    ``covariate_cols=None`` takes every column other than the outcome and
    treatment, in file order. Missing or non-numeric cells are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if covariate_cols is None:
            covariate_cols = [h for h in header if h not in (outcome_col, treatment_col)]
        wanted = [outcome_col, treatment_col, *covariate_cols]
        positions = {}
        for col in wanted:
            if col not in header:
                raise SchemaError(f"{path}: column {col!r} not found in header")
            positions[col] = header.index(col)

        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}: row {line_no} has {len(record)} fields, expected {len(header)}"
                )
            values = []
            for col in wanted:
                cell = record[positions[col]].strip()
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {line_no}, column {col!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(values)

    if not rows:
        raise ValidationError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    return Dataset(
        outcome=table[:, 0],
        treatment=table[:, 1],
        covariates=table[:, 2:],
        covariate_names=tuple(covariate_cols),
        mode=mode,
    )


def write_csv(data: Dataset, path, outcome_col: str = "y", treatment_col: str = "a") -> None:
    """Write a dataset so that :func:`load_csv` reads it back unchanged."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([outcome_col, treatment_col, *data.covariate_names])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.outcome[i])), repr(float(data.treatment[i]))]
                + [repr(float(v)) for v in data.covariates[i]]
            )
