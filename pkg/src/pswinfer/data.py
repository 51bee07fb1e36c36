"""Cohort data: loading, validation, design matrices and subgroup splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyArm,
    EmptyDataset,
    MissingColumn,
    NonBinaryOutcome,
    NonBinaryTreatment,
    TooManyLevels,
    UnknownColumn,
    UnparseableCell,
    UnreadableData,
)

MAX_SUBGROUP_LEVELS = 10


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary outcome ``y``, binary treatment ``z`` and covariates ``x`` (n x p).

    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _frozen(self.y)
        z = _frozen(self.z)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else np.empty((y.shape[0], 0))
        x = _frozen(x)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", names)

        n = y.shape[0]
        if n == 0:
            raise EmptyDataset("dataset has no rows")
        if z.shape != (n,) or x.shape[0] != n:
            raise ValueError("y, z and x must have the same number of rows")
        if len(names) != x.shape[1]:
            raise ValueError("covariate_names length does not match x columns")
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be distinct")
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryOutcome("outcome must be 0/1")
        if not np.all((z == 0) | (z == 1)):
            raise NonBinaryTreatment("treatment must be 0/1")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def require_both_arms(self) -> None:
        if self.n < 2 or self.n_treated == 0 or self.n_control == 0:
            raise EmptyArm(f"need both arms; treated={self.n_treated}, control={self.n_control}")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.x[:, self.covariate_names.index(name)]
        except ValueError:
            raise UnknownColumn(f"no covariate named {name!r}") from None

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.y[idx], self.z[idx], self.x[idx], self.covariate_names)

    def select(self, covariates: Sequence[str]) -> "Dataset":
        cols = [self.covariate_names.index(c) if c in self.covariate_names else -1
                for c in covariates]
        for c, j in zip(covariates, cols):
            if j < 0:
                raise UnknownColumn(f"no covariate named {c!r}")
        return Dataset(self.y, self.z, self.x[:, cols], tuple(covariates))

    def equals(self, other: "Dataset") -> bool:
        return (self.covariate_names == other.covariate_names
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.z, other.z)
                and np.array_equal(self.x, other.x))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Covariates with a leading column of ones."""

    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2 or v.shape[1] < 1 or not np.all(v[:, 0] == 1.0):
            raise ValueError("design matrix needs an intercept column of ones first")
        object.__setattr__(self, "values", np.ascontiguousarray(v))
        if not self.names:
            object.__setattr__(self, "names", ("(intercept)",) + tuple(
                f"c{j}" for j in range(1, v.shape[1])))

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])


def design_matrix(d: Dataset, covariates: Sequence[str] | None = None) -> DesignMatrix:
    """Intercept plus the selected covariates (all of them by default)."""
    if covariates is None:
        covariates = d.covariate_names
    sub = d.select(covariates).x if covariates else np.empty((d.n, 0))
    values = np.column_stack([np.ones(d.n), sub])
    return DesignMatrix(values, ("(intercept)",) + tuple(covariates))


def _parse(value: str, row: int, col: str) -> float:
    s = value.strip()
    if s == "":
        raise UnparseableCell(row, col, value)
    try:
        v = float(s)
    except ValueError:
        raise UnparseableCell(row, col, value) from None
    if not math.isfinite(v):
        raise UnparseableCell(row, col, value)
    return v


def load_csv(path, outcome: str, treatment: str,
             covariates: Sequence[str] | None = None,
             extra: Sequence[str] = ()) -> Dataset:
    """Read a comma-separated file with a header row.

    ``covariates=None`` takes every column other than outcome and treatment.
    ``extra`` names additional columns to carry along as covariates (e.g. a
    subgroup column that is not a model covariate).
    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise EmptyDataset(f"{path} is empty") from None
            rows = [r for r in reader if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as err:
        raise UnreadableData(f"cannot read {path}: {err}") from None

    if covariates is None:
        covariates = [h for h in header if h not in (outcome, treatment)]
    wanted = [outcome, treatment, *covariates, *[e for e in extra if e not in covariates]]
    for c in wanted:
        if c not in header:
            raise MissingColumn(f"column {c!r} not found in {path}")
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")

    pos = {c: header.index(c) for c in wanted}
    data = np.empty((len(rows), len(wanted)))
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise UnparseableCell(i, "<row>", ",".join(r))
        for j, c in enumerate(wanted):
            data[i - 1, j] = _parse(r[pos[c]], i, c)

    y, z = data[:, 0], data[:, 1]
    if not np.all((y == 0) | (y == 1)):
        bad = int(np.flatnonzero((y != 0) & (y != 1))[0]) + 1
        raise NonBinaryOutcome(f"outcome {outcome!r} is not 0/1 at row {bad}")
    if not np.all((z == 0) | (z == 1)):
        bad = int(np.flatnonzero((z != 0) & (z != 1))[0]) + 1
        raise NonBinaryTreatment(f"treatment {treatment!r} is not 0/1 at row {bad}")
    return Dataset(y, z, data[:, 2:], tuple(wanted[2:]))


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(d: Dataset, path, outcome: str = "y", treatment: str = "z") -> None:
    """Write ``d`` so that :func:`load_csv` reproduces it bit for bit."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([outcome, treatment, *d.covariate_names])
        for i in range(d.n):
            w.writerow([_fmt(d.y[i]), _fmt(d.z[i]), *(_fmt(v) for v in d.x[i])])


def level_label(v: float) -> str:
    return _fmt(v)


def subgroup_split(d: Dataset, column: str) -> list[tuple[str, Dataset]]:
    """Partition rows by the levels of ``column`` (sorted ascending).

    The split column is dropped from each sub-dataset.
    """
    if column not in d.covariate_names:
        raise UnknownColumn(f"no covariate named {column!r}")
    values = d.column(column)
    levels = np.unique(values)
    if levels.size > MAX_SUBGROUP_LEVELS:
        raise TooManyLevels(f"{column!r} has {levels.size} levels (max {MAX_SUBGROUP_LEVELS})")
    keep = [c for c in d.covariate_names if c != column]
    out = []
    for lv in levels:
        idx = np.flatnonzero(values == lv)
        out.append((level_label(lv), d.take(idx).select(keep)))
    return out
