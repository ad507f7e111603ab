"""Typed tabular data: loading, validation, subsampling, and ranges.

A Dataset is immutable after construction. Values are stored column-encoded
in one float64 matrix: numeric cells hold their value, categorical cells
hold the index of the level in the column's sorted level list. Encoding is
an internal detail; `column` returns decoded values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .util import rng_for

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSchema:
    """Name, kind, and (for categoricals) the sorted list of levels."""

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("column name must be nonempty")
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.levels) < 1:
            raise ValueError(f"categorical column {self.name!r} needs at least one level")
        if self.kind == NUMERIC and self.levels:
            raise ValueError(f"numeric column {self.name!r} must not carry levels")


@dataclass(frozen=True)
class SampleSpec:
    """Row cap and seed for uniform subsampling without replacement."""

    nmax: int
    seed: int = 0

    def __post_init__(self):
        if self.nmax < 1:
            raise ValueError("nmax must be >= 1")


class Dataset:
    """Immutable table with a designated response column.

    Parameters
    ----------
    columns : sequence of ColumnSchema
    encoded : (n, p) float64 matrix, categoricals as level indices
    response : name of the response column
    """

    def __init__(self, columns, encoded, response: str):
        columns = tuple(columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        if response not in names:
            raise ValueError(f"response {response!r} is not a column")
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim != 2 or encoded.shape[1] != len(columns):
            raise ValueError("encoded matrix shape does not match columns")
        if encoded.shape[0] < 1:
            raise ValueError("dataset must have at least one row")
        for j, col in enumerate(columns):
            vals = encoded[:, j]
            if col.kind == NUMERIC:
                if not np.all(np.isfinite(vals)):
                    raise ValueError(f"non-finite value in numeric column {col.name!r}")
            else:
                codes = vals.astype(np.int64)
                if np.any(codes != vals) or codes.min() < 0 or codes.max() >= len(col.levels):
                    raise ValueError(f"bad level code in column {col.name!r}")
        self.columns = columns
        self.response = response
        self._encoded = encoded
        self._encoded.setflags(write=False)
        self._index = {c.name: j for j, c in enumerate(columns)}

    # -- basic shape -------------------------------------------------------

    @property
    def n(self) -> int:
        return self._encoded.shape[0]

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def predictor_names(self) -> list[str]:
        return [c.name for c in self.columns if c.name != self.response]

    def schema(self, name: str) -> ColumnSchema:
        return self.columns[self.col_index(name)]

    def col_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    @property
    def encoded(self) -> np.ndarray:
        """The (n, p) float64 value matrix. Read-only view."""
        return self._encoded

    def column(self, name: str):
        """Decoded values: float array for numerics, list of strings otherwise."""
        j = self.col_index(name)
        col = self.columns[j]
        if col.kind == NUMERIC:
            return self._encoded[:, j].copy()
        return [col.levels[int(k)] for k in self._encoded[:, j]]

    def response_values(self) -> np.ndarray:
        """Encoded response column (numeric values or level codes)."""
        return self._encoded[:, self.col_index(self.response)].copy()

    # -- derived datasets ---------------------------------------------------

    def subset(self, row_indices) -> "Dataset":
        idx = np.asarray(row_indices, dtype=np.int64)
        return Dataset(self.columns, self._encoded[idx, :].copy(), self.response)

    def feature_matrix(self, feature_names) -> np.ndarray:
        """Encoded (n, m) matrix restricted to the given columns, in order."""
        cols = [self.col_index(name) for name in feature_names]
        return self._encoded[:, cols].copy()


def _parse_numeric(cell: str):
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, response: str, overrides: dict[str, str] | None = None) -> Dataset:
    """Load an RFC-4180 CSV with a header row into a typed Dataset.

    A column is numeric iff every cell parses as a finite decimal; everything
    else is categorical with sorted distinct levels. `overrides` forces kinds
    by column name. Empty cells are rejected: the pipeline assumes complete
    data.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if response not in header:
        raise ValueError(f"response {response!r} not found in header")
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names in header")
    p = len(header)
    for i, row in enumerate(rows):
        if len(row) != p:
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, expected {p}")
        for name, cell in zip(header, row):
            if cell == "":
                raise ValueError(f"{path}: missing value in column {name!r}, row {i + 2}")

    overrides = dict(overrides or {})
    for name in overrides:
        if name not in header:
            raise ValueError(f"override for unknown column {name!r}")
        if overrides[name] not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"override kind for {name!r} must be numeric or categorical")

    columns = []
    encoded = np.empty((len(rows), p), dtype=np.float64)
    for j, name in enumerate(header):
        cells = [row[j] for row in rows]
        parsed = [_parse_numeric(c) for c in cells]
        inferred = NUMERIC if all(v is not None for v in parsed) else CATEGORICAL
        kind = overrides.get(name, inferred)
        if kind == NUMERIC:
            if any(v is None for v in parsed):
                bad = cells[next(i for i, v in enumerate(parsed) if v is None)]
                raise ValueError(f"column {name!r} declared numeric but contains {bad!r}")
            columns.append(ColumnSchema(name, NUMERIC))
            encoded[:, j] = parsed
        else:
            levels = tuple(sorted(set(cells)))
            code = {lv: k for k, lv in enumerate(levels)}
            columns.append(ColumnSchema(name, CATEGORICAL, levels))
            encoded[:, j] = [code[c] for c in cells]
    return Dataset(columns, encoded, response)


def save_csv(d: Dataset, path) -> None:
    """Write a Dataset back out; numeric cells use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in d.columns])
        decoded = [d.column(c.name) for c in d.columns]
        for i in range(d.n):
            writer.writerow(
                [repr(col[i]) if c.kind == NUMERIC else col[i]
                 for c, col in zip(d.columns, decoded)]
            )


def sample_indices(n: int, spec: SampleSpec) -> np.ndarray:
    """Row indices selected by sample_rows, in original order."""
    if n <= spec.nmax:
        return np.arange(n)
    rng = rng_for(spec.seed, "sample_rows", n, spec.nmax)
    return np.sort(rng.permutation(n)[: spec.nmax])


def sample_rows(d: Dataset, spec: SampleSpec) -> Dataset:
    """Uniform sample of nmax rows without replacement, seeded; identity if n <= nmax.

    Sampled rows keep their original relative order so that downstream
    row-order-dependent reductions are stable.
    """
    if d.n <= spec.nmax:
        return d
    return d.subset(sample_indices(d.n, spec))


def column_range(d: Dataset, var: str):
    """(min, max) for a numeric predictor, the level list for a categorical one."""
    if var == d.response:
        raise ValueError(f"{var!r} is the response, not a predictor")
    col = d.schema(var)
    if col.kind == CATEGORICAL:
        return list(col.levels)
    vals = d.encoded[:, d.col_index(var)]
    return float(vals.min()), float(vals.max())
