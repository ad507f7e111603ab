"""Joint variable-importance / variable-interaction (VIVI) matrices.

The diagonal holds per-variable importance (permutation RMSE increase, or a
tree ensemble's embedded impurity totals); the off-diagonal holds pairwise
interaction strength measured on partial-dependence grids. Binary
classification runs on the logit scale throughout: wrap the predictor with
wrap_class and the observed targets become clamped logit indicators.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORICAL, Dataset, SampleSpec, sample_rows
from .pdp import make_grid, pd_1d, pd_2d
from .predictor import (
    BINARY_CLASSIFICATION,
    ClassWrapper,
    Predictor,
    check_features,
    logit_indicator,
    predict_batch,
)
from .util import rng_for, stable_seed

VIMP = "Vimp"
VINT = "Vint"


@dataclass
class ViviMatrix:
    """Square symmetric summary: importance on the diagonal, interactions off it."""

    vars: tuple[str, ...]
    values: np.ndarray
    importance_type: str = "agnostic"
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vars = tuple(self.vars)
        self.values = np.asarray(self.values, dtype=np.float64)
        m = len(self.vars)
        if len(set(self.vars)) != m:
            raise ValueError("variable names must be unique")
        if self.values.shape != (m, m):
            raise ValueError(f"matrix shape {self.values.shape} does not match {m} vars")
        off = ~np.eye(m, dtype=bool)
        if m > 1:
            if not np.array_equal(self.values.T[off], self.values[off]):
                raise ValueError("off-diagonal values must be symmetric")
            if self.values[off].min() < 0:
                raise ValueError("interaction values must be non-negative")
            if self.normalized and self.values[off].max() > 1 + 1e-9:
                raise ValueError("normalized interactions must not exceed 1")

    @property
    def m(self) -> int:
        return len(self.vars)

    def importance(self) -> dict[str, float]:
        return {v: float(self.values[i, i]) for i, v in enumerate(self.vars)}

    def interaction(self, var_a: str, var_b: str) -> float:
        return float(self.values[self.vars.index(var_a), self.vars.index(var_b)])

    def pairs(self):
        """Unordered (var_a, var_b, value) triples, matrix order, j < k."""
        for j in range(self.m):
            for k in range(j + 1, self.m):
                yield self.vars[j], self.vars[k], float(self.values[j, k])

    def to_dict(self) -> dict:
        return {
            "vars": list(self.vars),
            "matrix": [[float(v) for v in row] for row in self.values],
            "importance_type": self.importance_type,
            "normalized": self.normalized,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ViviMatrix":
        return cls(
            vars=tuple(payload["vars"]),
            values=np.asarray(payload["matrix"], dtype=np.float64),
            importance_type=payload.get("importance_type", "external"),
            normalized=bool(payload.get("normalized", False)),
            meta=dict(payload.get("meta", {})),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ViviMatrix":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class LongRow:
    variable_1: str
    variable_2: str
    value: float
    measure: str
    row: int
    col: int


def _target_values(p: Predictor, d: Dataset) -> np.ndarray:
    """Observed response on the scale the predictor reports on."""
    schema = d.schema(d.response)
    if isinstance(p, ClassWrapper) and p.task == BINARY_CLASSIFICATION:
        if schema.kind != CATEGORICAL or len(schema.levels) != 2:
            raise ValueError("logit-wrapped predictor needs a binary categorical response")
        if p.positive_class not in schema.levels:
            raise ValueError(f"positive_class {p.positive_class!r} not a response level")
        code = schema.levels.index(p.positive_class)
        return logit_indicator(schema.levels, d.response_values(), code, p.eps)
    if schema.kind == CATEGORICAL:
        raise ValueError("categorical response requires a classification wrapper")
    return d.response_values()


def _rmse(y, yhat) -> float:
    err = y - yhat
    return float(np.sqrt(np.mean(err * err)))


def permutation_replicates(p: Predictor, d: Dataset, num_perm: int = 4,
                           seed: int = 0) -> dict[str, np.ndarray]:
    """Per-replicate RMSE increases for every predictor column.

    Replicate r of variable v permutes column v with the generator
    rng_for(seed, "perm", v, r); the baseline RMSE is computed once.
    """
    if num_perm < 1:
        raise ValueError("numPerm must be >= 1")
    check_features(p, d)
    y = _target_values(p, d)
    X = d.feature_matrix(p.feature_names)
    base_rmse = _rmse(y, predict_batch(p, X))
    out = {}
    for var in d.predictor_names:
        pos = p.feature_names.index(var)
        reps = np.empty(num_perm)
        for r in range(num_perm):
            perm = rng_for(seed, "perm", var, r).permutation(d.n)
            Xp = X.copy()
            Xp[:, pos] = X[perm, pos]
            reps[r] = _rmse(y, predict_batch(p, Xp)) - base_rmse
        out[var] = reps
    return out


def permutation_importance(p: Predictor, d: Dataset, num_perm: int = 4,
                           seed: int = 0) -> dict[str, float]:
    """Mean RMSE increase over num_perm seeded permutations, per predictor."""
    reps = permutation_replicates(p, d, num_perm, seed)
    return {var: float(np.mean(r)) for var, r in reps.items()}


def _h_from_surfaces(f_ab: np.ndarray, f_a: np.ndarray, f_b: np.ndarray,
                     normalized: bool) -> float:
    """Interaction statistic from a joint surface and its two margins.

    If the joint surface is bitwise equal to either margin broadcast over
    the grid cross, the predictor ignored the other variable on every
    evaluation point and the statistic is exactly zero.
    """
    if np.array_equal(f_ab, np.broadcast_to(f_a[:, None], f_ab.shape)):
        return 0.0
    if np.array_equal(f_ab, np.broadcast_to(f_b[None, :], f_ab.shape)):
        return 0.0
    c_ab = f_ab - f_ab.mean()
    c_a = f_a - f_a.mean()
    c_b = f_b - f_b.mean()
    resid = c_ab - c_a[:, None] - c_b[None, :]
    numerator = float(np.sum(resid * resid))
    if normalized:
        denom = float(np.sum(c_ab * c_ab))
        return numerator / denom if denom > 0 else 0.0
    return float(np.sqrt(numerator / f_ab.size))


def h_statistic(p: Predictor, d: Dataset, var_a: str, var_b: str, grid_size: int = 50,
                nmax: int = 500, seed: int = 0, normalized: bool = False,
                workers: int = 1) -> float:
    """Pairwise interaction strength from mean-centered PD functions.

    Unnormalized: root-mean-square of the interaction residual over grid
    cells (response units). Normalized: residual sum of squares over the
    joint surface's sum of squares. The pair is evaluated in dataset column
    order internally, so h(a, b) == h(b, a) bitwise.
    """
    if var_a == var_b:
        raise ValueError("h_statistic needs two distinct variables")
    if d.col_index(var_a) > d.col_index(var_b):
        var_a, var_b = var_b, var_a
    dd = sample_rows(d, SampleSpec(nmax, seed))
    f_a = pd_1d(p, dd, var_a, grid_size, nmax=dd.n, seed=seed, n_ice=0).values
    f_b = pd_1d(p, dd, var_b, grid_size, nmax=dd.n, seed=seed, n_ice=0).values
    f_ab = pd_2d(p, dd, var_a, var_b, grid_size, nmax=dd.n, seed=seed,
                 workers=workers).values
    return _h_from_surfaces(f_ab, f_a, f_b, normalized)


@dataclass(frozen=True)
class ViviOptions:
    grid_size: int = 50
    nmax: int = 500
    num_perm: int = 4
    normalized: bool = False
    importance_type: str = "agnostic"
    seed: int = 0
    reorder: bool = False
    workers: int = 1

    def validate(self):
        if self.grid_size < 1:
            raise ValueError("gridSize must be >= 1")
        if self.nmax < 1:
            raise ValueError("nmax must be >= 1")
        if self.num_perm < 1:
            raise ValueError("numPerm must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.importance_type not in ("agnostic", "impurity"):
            raise ValueError(f"unknown importance_type {self.importance_type!r}")


def compute(p: Predictor, d: Dataset, options: ViviOptions | None = None) -> ViviMatrix:
    """Assemble the full VIVI matrix for every predictor column of d.

    Rows are subsampled once (nmax, seed); the diagonal and all m(m-1)/2
    pairwise interactions are computed on that one subsample. Pair
    evaluations are self-contained, so any worker count gives identical
    results. With normalized=True, ratio values are capped at 1: overshoot
    only arises when the joint PD surface is nearly flat and the ratio is
    dominated by noise.
    """
    opts = options or ViviOptions()
    opts.validate()
    check_features(p, d)
    names = d.predictor_names
    missing = [v for v in names if v not in p.feature_names]
    if missing:
        raise ValueError(f"predictor does not accept columns {missing}")

    dd = sample_rows(d, SampleSpec(opts.nmax, opts.seed))
    m = len(names)
    values = np.zeros((m, m))

    if opts.importance_type == "impurity":
        inner = p.inner if isinstance(p, ClassWrapper) else p
        imp_table = getattr(inner, "impurity_importance", None)
        if imp_table is None:
            raise ValueError("importance_type 'impurity' needs a bagged-trees predictor")
        replicates = None
        for i, var in enumerate(names):
            values[i, i] = imp_table[var]
    else:
        reps = permutation_replicates(p, dd, opts.num_perm, opts.seed)
        replicates = {var: [float(x) for x in arr] for var, arr in reps.items()}
        for i, var in enumerate(names):
            values[i, i] = float(np.mean(reps[var]))

    marginals = {
        var: pd_1d(p, dd, var, opts.grid_size, nmax=dd.n, seed=opts.seed, n_ice=0).values
        for var in names
    }

    def eval_pair(pair):
        j, k = pair
        pair_seed = stable_seed(opts.seed, names[j], names[k])
        f_ab = pd_2d(p, dd, names[j], names[k], opts.grid_size, nmax=dd.n,
                     seed=pair_seed).values
        h = _h_from_surfaces(f_ab, marginals[names[j]], marginals[names[k]],
                             opts.normalized)
        if opts.normalized:
            h = min(h, 1.0)
        return j, k, h

    pairs = [(j, k) for j in range(m) for k in range(j + 1, m)]
    if opts.workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(eval_pair, pairs))
    else:
        results = [eval_pair(pair) for pair in pairs]
    for j, k, h in results:
        values[j, k] = values[k, j] = h

    meta = {
        "gridSize": opts.grid_size,
        "nmax": opts.nmax,
        "numPerm": opts.num_perm,
        "seed": opts.seed,
        "rows_used": dd.n,
    }
    if replicates is not None:
        meta["importance_replicates"] = replicates
    out = ViviMatrix(tuple(names), values, opts.importance_type, opts.normalized, meta)
    if opts.reorder:
        from .seriation import reorder

        out = reorder(out)
    return out


def import_external(importance, interaction=()) -> ViviMatrix:
    """Build a matrix from externally computed (var, value) and (a, b, value) lists."""
    names = [v for v, _ in importance]
    if len(set(names)) != len(names):
        raise ValueError("importance variables must be unique")
    index = {v: i for i, v in enumerate(names)}
    m = len(names)
    values = np.zeros((m, m))
    for v, x in importance:
        values[index[v], index[v]] = float(x)
    seen: dict[tuple[int, int], float] = {}
    for a, b, x in interaction:
        if a not in index or b not in index:
            raise ValueError(f"interaction references unknown variable {a!r}/{b!r}")
        if a == b:
            raise ValueError(f"interaction pair ({a!r}, {b!r}) must be two distinct variables")
        key = tuple(sorted((index[a], index[b])))
        x = float(x)
        if key in seen and seen[key] != x:
            raise ValueError(f"conflicting values for pair ({a!r}, {b!r})")
        seen[key] = x
        values[key[0], key[1]] = values[key[1], key[0]] = x
    return ViviMatrix(tuple(names), values, importance_type="external", meta={})


def as_long_table(v: ViviMatrix) -> list[LongRow]:
    """All m^2 entries in column-major order with 1-based indices."""
    out = []
    for col in range(v.m):
        for row in range(v.m):
            out.append(
                LongRow(
                    variable_1=v.vars[row],
                    variable_2=v.vars[col],
                    value=float(v.values[row, col]),
                    measure=VIMP if row == col else VINT,
                    row=row + 1,
                    col=col + 1,
                )
            )
    return out


def from_long_table(rows) -> ViviMatrix:
    """Rebuild a matrix from long rows (inverse of as_long_table)."""
    size = max(r.row for r in rows)
    names: list[str | None] = [None] * size
    values = np.zeros((size, size))
    for r in rows:
        names[r.row - 1] = r.variable_1
        values[r.row - 1, r.col - 1] = r.value
    return ViviMatrix(tuple(names), values, importance_type="external", meta={})


def long_table_to_csv(v: ViviMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Variable_1", "Variable_2", "Value", "Measure", "Row", "Col"])
        for r in as_long_table(v):
            writer.writerow([r.variable_1, r.variable_2, repr(r.value), r.measure, r.row, r.col])


def offdiag_quantile(v: ViviMatrix, q: float) -> float:
    """Quantile of the off-diagonal entries (diagonal excluded, both triangles)."""
    if v.m < 2:
        raise ValueError("need at least two variables for an interaction quantile")
    off = v.values[~np.eye(v.m, dtype=bool)]
    return float(np.quantile(off, q))
