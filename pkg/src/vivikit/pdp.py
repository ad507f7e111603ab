"""Partial-dependence surfaces: grids, 1-D/2-D evaluation, ICE, hull masking.

A surface value at a grid cell is the mean prediction over the evaluation
rows with the target variable(s) overwritten by the cell's value(s). Cells
are independent, so evaluation is partitioned by cell (never by observation)
and each cell's mean reduces its rows in a fixed order: results are
identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import CATEGORICAL, NUMERIC, Dataset, SampleSpec, sample_indices, sample_rows
from .predictor import Predictor, check_features, predict_batch
from .util import rng_for

HULL_TOL = 1e-9


@dataclass(frozen=True)
class Grid1D:
    """Evaluation points for one variable.

    Numeric grids hold gridSize equally spaced values from column min to max
    (one point when the column is constant); categorical grids hold every
    level, regardless of gridSize.
    """

    var: str
    kind: str
    points: tuple

    def __len__(self):
        return len(self.points)

    @property
    def encoded(self) -> np.ndarray:
        """Grid values in dataset encoding (level codes for categoricals)."""
        if self.kind == CATEGORICAL:
            return np.arange(len(self.points), dtype=np.float64)
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class IceBundle:
    """Per-observation curves; rows index into the dataset handed to pd_1d."""

    rows: np.ndarray
    curves: np.ndarray


@dataclass(frozen=True)
class PDSurface:
    vars: tuple[str, ...]
    grids: tuple[Grid1D, ...]
    values: np.ndarray
    ice: IceBundle | None = None
    mask: np.ndarray | None = None

    def to_dict(self) -> dict:
        ice = None
        if self.ice is not None:
            ice = {
                "rows": [int(r) for r in self.ice.rows],
                "curves": [[float(v) for v in c] for c in self.ice.curves],
            }
        return {
            "vars": list(self.vars),
            "grid": [list(g.points) for g in self.grids],
            "values": self.values.tolist(),
            "mask": None if self.mask is None else self.mask.tolist(),
            "ice": ice,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


def make_grid(d: Dataset, var: str, grid_size: int) -> Grid1D:
    """Build the evaluation grid for one predictor column."""
    if grid_size < 1:
        raise ValueError("gridSize must be >= 1")
    schema = d.schema(var)
    if var == d.response:
        raise ValueError(f"{var!r} is the response, not a predictor")
    if schema.kind == CATEGORICAL:
        return Grid1D(var, CATEGORICAL, tuple(schema.levels))
    vals = d.encoded[:, d.col_index(var)]
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi or grid_size == 1:
        return Grid1D(var, NUMERIC, (lo,))
    return Grid1D(var, NUMERIC, tuple(np.linspace(lo, hi, grid_size)))


def _cell_means(p, base, col_positions, cell_values, workers=1, keep_preds=False):
    """Mean prediction per cell; cells are (len(cell_values[0]),) substitutions.

    cell_values: one array per substituted column, aligned by cell index.
    Returns (means, preds_by_cell or None). Cell work is chunked; each cell's
    rows stay contiguous and are reduced with a fixed-shape mean.
    """
    n = base.shape[0]
    n_cells = len(cell_values[0])
    means = np.empty(n_cells)
    preds = np.empty((n_cells, n)) if keep_preds else None
    chunk = max(1, 250_000 // max(n, 1))

    def eval_span(lo):
        hi = min(lo + chunk, n_cells)
        big = np.tile(base, (hi - lo, 1))
        for pos, vals in zip(col_positions, cell_values):
            big[:, pos] = np.repeat(vals[lo:hi], n)
        out = predict_batch(p, big).reshape(hi - lo, n)
        means[lo:hi] = out.mean(axis=1)
        if keep_preds:
            preds[lo:hi] = out

    spans = list(range(0, n_cells, chunk))
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(eval_span, spans))
    else:
        for lo in spans:
            eval_span(lo)
    return means, preds


def _feature_position(p: Predictor, var: str) -> int:
    try:
        return p.feature_names.index(var)
    except ValueError:
        raise ValueError(f"{var!r} is not a feature of the predictor") from None


def pd_1d(p: Predictor, d: Dataset, var: str, grid_size: int = 50, nmax: int = 500,
          seed: int = 0, n_ice=30, workers: int = 1) -> PDSurface:
    """1-D partial dependence with optional ICE curves.

    n_ice: a count (seeded uniform sample of the retained rows; 0 disables
    ICE) or an explicit list of row indices into `d`.
    """
    check_features(p, d)
    sampled_idx = sample_indices(d.n, SampleSpec(nmax, seed))
    dd = d if sampled_idx.size == d.n else d.subset(sampled_idx)
    grid = make_grid(dd, var, grid_size)
    base = dd.feature_matrix(p.feature_names)
    pos = _feature_position(p, var)

    want_ice = not (isinstance(n_ice, int) and n_ice == 0)
    means, preds = _cell_means(p, base, [pos], [grid.encoded], workers=workers,
                               keep_preds=want_ice)
    ice = None
    if want_ice:
        if isinstance(n_ice, int):
            if n_ice >= dd.n:
                keep = np.arange(dd.n)
            else:
                keep = np.sort(rng_for(seed, "ice", var).permutation(dd.n)[:n_ice])
            rows = sampled_idx[keep]
            curves = preds[:, keep].T.copy()
        else:
            rows = np.asarray(list(n_ice), dtype=np.int64)
            if rows.size and (rows.min() < 0 or rows.max() >= d.n):
                raise ValueError("ICE row index out of range")
            extra = d.subset(rows).feature_matrix(p.feature_names) if rows.size else None
            curves = np.empty((rows.size, len(grid)))
            for g, val in enumerate(grid.encoded):
                sub = extra.copy()
                sub[:, pos] = val
                curves[:, g] = predict_batch(p, sub)
        ice = IceBundle(rows=rows, curves=curves)
    return PDSurface(vars=(var,), grids=(grid,), values=means, ice=ice)


def pd_2d(p: Predictor, d: Dataset, var_a: str, var_b: str, grid_size: int = 50,
          nmax: int = 500, seed: int = 0, convex_hull: bool = False,
          workers: int = 1) -> PDSurface:
    """2-D partial dependence over the grid cross of two variables.

    With convex_hull, numeric x numeric cells strictly outside the hull of
    the observed pairs are masked. The hull comes from the full `d`, before
    row subsampling: masking reflects where data exists, not sampling luck.
    """
    if var_a == var_b:
        raise ValueError("pd_2d needs two distinct variables")
    check_features(p, d)
    dd = sample_rows(d, SampleSpec(nmax, seed))
    grid_a = make_grid(dd, var_a, grid_size)
    grid_b = make_grid(dd, var_b, grid_size)
    base = dd.feature_matrix(p.feature_names)
    pos_a = _feature_position(p, var_a)
    pos_b = _feature_position(p, var_b)

    enc_a = np.repeat(grid_a.encoded, len(grid_b))
    enc_b = np.tile(grid_b.encoded, len(grid_a))
    means, _ = _cell_means(p, base, [pos_a, pos_b], [enc_a, enc_b], workers=workers)
    values = means.reshape(len(grid_a), len(grid_b))

    mask = None
    if convex_hull:
        mask = np.zeros(values.shape, dtype=bool)
        if grid_a.kind == NUMERIC and grid_b.kind == NUMERIC:
            pts = np.column_stack(
                [d.encoded[:, d.col_index(var_a)], d.encoded[:, d.col_index(var_b)]]
            )
            hull = convex_hull_points(pts)
            for i, a in enumerate(grid_a.points):
                for j, b in enumerate(grid_b.points):
                    mask[i, j] = not point_in_hull((a, b), hull)
    return PDSurface(vars=(var_a, var_b), grids=(grid_a, grid_b), values=values, mask=mask)


# -- convex hull ------------------------------------------------------------


def convex_hull_points(points) -> list[tuple[float, float]]:
    """Monotone-chain convex hull, counter-clockwise; degenerates to a
    segment or single point for collinear or identical inputs."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for pt in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], pt) <= 0:
            lower.pop()
        lower.append(pt)
    upper = []
    for pt in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], pt) <= 0:
            upper.pop()
        upper.append(pt)
    hull = lower[:-1] + upper[:-1]
    # all-collinear inputs collapse to the extreme pair
    return hull if len(hull) >= 3 else [pts[0], pts[-1]]


def point_in_hull(pt, hull) -> bool:
    """True iff pt lies inside or on the hull boundary (1e-9 tolerance).

    Handles the degenerate point and segment hulls produced by
    convex_hull_points.
    """
    x, y = float(pt[0]), float(pt[1])
    if len(hull) == 0:
        return False
    if len(hull) == 1:
        hx, hy = hull[0]
        return abs(x - hx) <= HULL_TOL and abs(y - hy) <= HULL_TOL
    if len(hull) == 2:
        (ax, ay), (bx, by) = hull
        cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        if abs(cross) > HULL_TOL:
            return False
        dot = (x - ax) * (bx - ax) + (y - ay) * (by - ay)
        seg2 = (bx - ax) ** 2 + (by - ay) ** 2
        return -HULL_TOL <= dot <= seg2 + HULL_TOL
    for i in range(len(hull)):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % len(hull)]
        if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -HULL_TOL:
            return False
    return True
