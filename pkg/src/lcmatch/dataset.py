"""Data model, CSV ingestion, one-hot expansion, fold planning and scaling."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-12


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "continuous"  # "continuous" | "binary"
    parent_categorical: Optional[str] = None


@dataclass(frozen=True)
class Schema:
    treatment: str
    outcome: str
    categoricals: tuple = ()
    treatment_map: Optional[Mapping] = None

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            treatment=raw["treatment"],
            outcome=raw["outcome"],
            categoricals=tuple(raw.get("categoricals", [])),
            treatment_map=raw.get("treatment_map"),
        )


@dataclass(frozen=True)
class RawTable:
    """Parsed CSV with declared roles, before one-hot expansion."""

    frame: pd.DataFrame
    T: np.ndarray
    Y: np.ndarray
    schema: Schema

    @property
    def n(self) -> int:
        return len(self.T)

    @property
    def covariate_names(self) -> list:
        return [c for c in self.frame.columns if c not in (self.schema.treatment, self.schema.outcome)]


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x p), binary treatment ``T`` and outcome ``Y``."""

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    columns: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be a 2-D matrix")
        T = np.asarray(self.T)
        Y = np.asarray(self.Y, dtype=float)
        if T.shape != (X.shape[0],) or Y.shape != (X.shape[0],):
            raise DataError("X, T and Y must agree on the number of rows")
        if not np.isin(T, (0, 1)).all():
            raise DataError("treatment must be 0/1")
        if not np.isfinite(X).all() or not np.isfinite(Y).all():
            raise DataError("X and Y must not contain missing or infinite values")
        columns = tuple(self.columns) or tuple(Column(f"X{j + 1}") for j in range(X.shape[1]))
        if len(columns) != X.shape[1]:
            raise DataError("column metadata does not match X width")
        for j, col in enumerate(columns):
            if col.kind == "binary" and not np.isin(X[:, j], (0.0, 1.0)).all():
                raise DataError(f"binary column {col.name!r} holds values other than 0/1")
        for arr in (X, Y):
            arr.setflags(write=False)
        T = T.astype(np.int8)
        T.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def column_names(self) -> list:
        return [c.name for c in self.columns]

    def check_arms(self) -> None:
        if self.T.sum() == 0 or self.T.sum() == self.n:
            raise DataError("both treatment arms must be nonempty")

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.T[rows], self.Y[rows], self.columns)


def load_csv(path, schema: Schema) -> RawTable:
    """Read a headered UTF-8 CSV and type its columns.

    Errors name the offending row (1-based, header excluded) and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    for role in (schema.treatment, schema.outcome):
        if role not in frame.columns:
            raise DataError(f"column {role!r} not in {path}")
    for cat in schema.categoricals:
        if cat not in frame.columns:
            raise DataError(f"categorical column {cat!r} not in {path}")

    for col in frame.columns:
        blank = frame[col].str.strip() == ""
        if blank.any():
            row = int(np.flatnonzero(blank.to_numpy())[0]) + 1
            raise DataError(f"blank cell at row {row}, column {col!r}")

    t_raw = frame[schema.treatment].str.strip()
    levels = sorted(t_raw.unique())
    if len(levels) != 2:
        raise DataError(f"treatment column {schema.treatment!r} has {len(levels)} distinct values, expected 2")
    if schema.treatment_map is not None:
        mapping = {str(k): int(v) for k, v in schema.treatment_map.items()}
        missing = set(levels) - set(mapping)
        if missing:
            raise DataError(f"treatment values {sorted(missing)} have no declared mapping")
        T = t_raw.map(mapping).to_numpy()
        if set(np.unique(T)) != {0, 1}:
            raise DataError("treatment mapping must send the two labels to 0 and 1")
    else:
        try:
            T = t_raw.astype(float).to_numpy()
        except ValueError:
            raise DataError(
                f"treatment values {levels} are not numeric; declare a treatment_map"
            ) from None
        if set(np.unique(T)) != {0.0, 1.0}:
            raise DataError(f"treatment values {levels} are not 0/1; declare a treatment_map")

    typed = {}
    for col in frame.columns:
        if col in schema.categoricals or col == schema.treatment:
            typed[col] = frame[col].str.strip()
            continue
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0]) + 1
            raise DataError(f"unparseable value {frame[col].iloc[row - 1]!r} at row {row}, column {col!r}")
        typed[col] = values.astype(float)
    table = pd.DataFrame(typed, columns=frame.columns)
    return RawTable(table, T.astype(np.int8), table[schema.outcome].to_numpy(dtype=float), schema)


def dummify(raw: RawTable) -> Dataset:
    """Expand declared categoricals into one indicator per level (no level dropped)."""
    blocks = []
    columns = []
    for name in raw.covariate_names:
        values = raw.frame[name]
        if name in raw.schema.categoricals:
            levels = sorted(values.unique())
            if len(levels) < 2:
                warnings.warn(f"categorical {name!r} has a single level; dropped", stacklevel=2)
                continue
            for level in levels:
                blocks.append((values == level).to_numpy(dtype=float))
                columns.append(Column(f"{name}={level}", "binary", name))
        else:
            arr = values.to_numpy(dtype=float)
            blocks.append(arr)
            kind = "binary" if np.isin(arr, (0.0, 1.0)).all() else "continuous"
            columns.append(Column(name, kind))
    X = np.column_stack(blocks) if blocks else np.empty((raw.n, 0))
    data = Dataset(X, raw.T, raw.Y, tuple(columns))
    data.check_arms()
    return data


def load_dataset(path, schema: Schema) -> Dataset:
    return dummify(load_csv(path, schema))


@dataclass(frozen=True)
class FoldPlan:
    eta: int
    assignments: np.ndarray
    seed: int

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_folds(n: int, eta: int, seed) -> FoldPlan:
    """Uniformly random balanced partition of ``range(n)`` into ``eta`` folds."""
    if eta < 2:
        raise ValueError("eta must be at least 2")
    if eta > n:
        raise ValueError(f"eta={eta} exceeds n={n}")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    assignments[rng.permutation(n)] = np.arange(n) % eta
    assignments.setflags(write=False)
    return FoldPlan(eta, assignments, seed)


@dataclass(frozen=True)
class Standardization:
    means: np.ndarray
    scales: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.scales

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.scales + self.means


def standardize(X: np.ndarray, fit_rows) -> tuple:
    """z-score every row of ``X`` using statistics of ``fit_rows`` only.

    Sample standard deviation (ddof=1); constant or single-row columns get scale 1.
    """
    fit_rows = np.asarray(fit_rows)
    if fit_rows.size == 0:
        raise ValueError("fit_rows must be nonempty")
    ref = X[fit_rows]
    means = ref.mean(axis=0)
    if ref.shape[0] > 1:
        scales = ref.std(axis=0, ddof=1)
    else:
        scales = np.zeros(X.shape[1])
    scales = np.where(scales > SCALE_FLOOR, scales, 1.0)
    st = Standardization(means, scales)
    return st.transform(X), st
