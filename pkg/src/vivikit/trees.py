"""Bagged CART-style regression trees.

Splits minimize child SSE, scanned in column order then threshold order with
strictly-better gains, so equal-gain candidates keep the first: fits are
fully reproducible. Numeric splits are `x <= midpoint`; categorical splits
are one-level-vs-rest equality tests in level-code order.

Prediction flattens every tree into parallel arrays and routes whole batches
through one kernel (numba when importable, numpy otherwise; both traverse
identically and average trees in the same order, so results are bit-equal).
"""

from __future__ import annotations

import numpy as np

from .dataset import NUMERIC
from .predictor import Predictor
from .util import rng_for

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True, nogil=True)
def _traverse_kernel(feat, is_cat, thresh, left, right, value, roots, X, out):
    n = X.shape[0]
    n_trees = roots.shape[0]
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feat[node] >= 0:
                x = X[i, feat[node]]
                if is_cat[node] == 1:
                    go_left = x == thresh[node]
                else:
                    go_left = x <= thresh[node]
                node = left[node] if go_left else right[node]
            acc += value[node]
        out[i] = acc / n_trees


def _traverse_numpy(feat, is_cat, thresh, left, right, value, roots, X, out):
    n = X.shape[0]
    rows = np.arange(n)
    acc = np.zeros(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int32)
        while True:
            f = feat[node]
            live = f >= 0
            if not live.any():
                break
            x = X[rows, np.where(live, f, 0)]
            cat = is_cat[node] == 1
            go_left = np.where(cat, x == thresh[node], x <= thresh[node])
            nxt = np.where(go_left, left[node], right[node])
            node = np.where(live, nxt, node)
        acc += value[node]
    out[:] = acc / len(roots)


class _TreeBuilder:
    """Grows one CART regression tree on a bootstrap sample."""

    def __init__(self, X, y, schemas, max_depth, importance):
        self.X = X
        self.y = y
        self.schemas = schemas
        self.max_depth = max_depth
        self.importance = importance
        self.feat: list[int] = []
        self.is_cat: list[int] = []
        self.thresh: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self):
        self.feat.append(-1)
        self.is_cat.append(0)
        self.thresh.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feat) - 1

    def build(self, idx, depth=0) -> int:
        node = self._new_node()
        y = self.y[idx]
        self.value[node] = float(np.mean(y))
        if depth >= self.max_depth or idx.size < 2 or y.min() == y.max():
            return node
        best = self._best_split(idx, y)
        if best is None:
            return node
        j, is_cat, thr, gain, go_left = best
        self.importance[j] += gain
        self.feat[node] = j
        self.is_cat[node] = is_cat
        self.thresh[node] = thr
        self.left[node] = self.build(idx[go_left], depth + 1)
        self.right[node] = self.build(idx[~go_left], depth + 1)
        return node

    def _best_split(self, idx, y):
        n = idx.size
        total = float(np.sum(y))
        total_sq = float(np.sum(y * y))
        sse_parent = total_sq - total * total / n
        best = None
        best_gain = 0.0
        for j, schema in enumerate(self.schemas):
            v = self.X[idx, j]
            if schema.kind == NUMERIC:
                order = np.argsort(v, kind="stable")
                sv = v[order]
                sy = y[order]
                csum = np.cumsum(sy)
                csq = np.cumsum(sy * sy)
                # split after position i is valid where the value strictly increases
                valid = sv[:-1] < sv[1:]
                if not valid.any():
                    continue
                nl = np.arange(1, n)
                sse_l = csq[:-1] - csum[:-1] ** 2 / nl
                sse_r = (total_sq - csq[:-1]) - (total - csum[:-1]) ** 2 / (n - nl)
                gains = np.where(valid, sse_parent - sse_l - sse_r, -np.inf)
                pos = int(np.argmax(gains))
                gain = float(gains[pos])
                if gain > best_gain:
                    best_gain = gain
                    thr = (sv[pos] + sv[pos + 1]) / 2.0
                    best = (j, 0, float(thr), gain, v <= thr)
            else:
                codes = v.astype(np.int64)
                n_levels = len(schema.levels)
                cnt = np.bincount(codes, minlength=n_levels).astype(np.float64)
                s = np.bincount(codes, weights=y, minlength=n_levels)
                sq = np.bincount(codes, weights=y * y, minlength=n_levels)
                for c in range(n_levels):
                    if cnt[c] == 0 or cnt[c] == n:
                        continue
                    sse_l = sq[c] - s[c] ** 2 / cnt[c]
                    sse_r = (total_sq - sq[c]) - (total - s[c]) ** 2 / (n - cnt[c])
                    gain = float(sse_parent - sse_l - sse_r)
                    if gain > best_gain:
                        best_gain = gain
                        best = (j, 1, float(c), gain, v == c)
        return best


class BaggedTreesModel(Predictor):
    """Ensemble of bootstrap-fitted regression trees with embedded importance."""

    kind = "builtin_bagged_trees"

    def __init__(self, feature_names, feature_schemas, pack, impurity_importance, params):
        self.feature_names = tuple(feature_names)
        self.feature_schemas = tuple(feature_schemas)
        (self._feat, self._is_cat, self._thresh, self._left, self._right,
         self._value, self._roots) = pack
        self.impurity_importance = impurity_importance
        self.params = params

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        kernel = _traverse_kernel if HAVE_NUMBA else _traverse_numpy
        kernel(self._feat, self._is_cat, self._thresh, self._left, self._right,
               self._value, self._roots, X, out)
        return out


def fit_bagged_trees(feature_names, feature_schemas, X, y, n_trees, max_depth, seed) -> BaggedTreesModel:
    if n_trees < 1:
        raise ValueError("bagged_trees requires n_trees >= 1")
    if max_depth < 1:
        raise ValueError("bagged_trees requires max_depth >= 1")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    importance = np.zeros(X.shape[1])
    feat_parts, cat_parts, thr_parts = [], [], []
    left_parts, right_parts, value_parts, roots = [], [], [], []
    offset = 0
    for t in range(n_trees):
        boot = rng_for(seed, "bootstrap", t).integers(0, n, size=n)
        builder = _TreeBuilder(X, y, feature_schemas, max_depth, importance)
        root = builder.build(np.sort(boot))
        roots.append(offset + root)
        feat_parts.append(np.asarray(builder.feat, dtype=np.int32))
        cat_parts.append(np.asarray(builder.is_cat, dtype=np.uint8))
        thr_parts.append(np.asarray(builder.thresh, dtype=np.float64))
        left_parts.append(np.asarray(builder.left, dtype=np.int32) + offset)
        right_parts.append(np.asarray(builder.right, dtype=np.int32) + offset)
        value_parts.append(np.asarray(builder.value, dtype=np.float64))
        offset += len(builder.feat)
    pack = (
        np.concatenate(feat_parts),
        np.concatenate(cat_parts),
        np.concatenate(thr_parts),
        np.concatenate(left_parts),
        np.concatenate(right_parts),
        np.concatenate(value_parts),
        np.asarray(roots, dtype=np.int32),
    )
    params = {"n_trees": n_trees, "max_depth": max_depth, "seed": seed}
    imp = {name: float(importance[j]) for j, name in enumerate(feature_names)}
    return BaggedTreesModel(feature_names, feature_schemas, pack, imp, params)
