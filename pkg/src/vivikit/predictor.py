"""Uniform prediction contract over built-in models and wrappers.

Every predictor maps an encoded (k, m) feature matrix (columns in
`feature_names` order, categoricals as level codes) to k finite float64
predictions, deterministically. Fitted models are immutable and safe to
call from concurrent workers.
"""

from __future__ import annotations

import math

import numpy as np

from .dataset import CATEGORICAL, NUMERIC, ColumnSchema, Dataset
from .util import rng_for

REGRESSION = "regression"
BINARY_CLASSIFICATION = "binary_classification"


class PredictionError(RuntimeError):
    """A predictor violated its contract or an external process failed."""


class Predictor:
    """Base prediction contract.

    Attributes
    ----------
    feature_names : tuple of predictor column names, in call order
    feature_schemas : matching ColumnSchema tuple, or None if the predictor
        accepts any dataset carrying the named columns
    """

    kind = "base"
    feature_names: tuple[str, ...] = ()
    feature_schemas: tuple[ColumnSchema, ...] | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def predict_batch(p: Predictor, X: np.ndarray) -> np.ndarray:
    """Call p.predict and enforce the shape/finiteness contract."""
    out = np.asarray(p.predict(X), dtype=np.float64)
    if out.shape != (X.shape[0],):
        raise PredictionError(
            f"predictor returned {out.shape} predictions for {X.shape[0]} rows"
        )
    if not np.all(np.isfinite(out)):
        raise PredictionError("predictor returned a non-finite prediction")
    return out


def check_features(p: Predictor, d: Dataset) -> None:
    """Raise unless d supplies every feature with the fitted schema."""
    for name in p.feature_names:
        if name not in [c.name for c in d.columns]:
            raise ValueError(f"dataset is missing feature column {name!r}")
    if p.feature_schemas is None:
        return
    for schema in p.feature_schemas:
        actual = d.schema(schema.name)
        if actual != schema:
            raise ValueError(
                f"column {schema.name!r} does not match the schema the model was fit with"
            )


class FunctionPredictor(Predictor):
    """Adapter for a plain function of the feature columns.

    fn receives a dict {name: float64 array} (categoricals as level codes)
    and must return one value per row. Used for closed-form oracles.
    """

    kind = "function"

    def __init__(self, fn, feature_names, feature_schemas=None):
        self.fn = fn
        self.feature_names = tuple(feature_names)
        self.feature_schemas = tuple(feature_schemas) if feature_schemas else None

    def predict(self, X):
        cols = {name: X[:, j] for j, name in enumerate(self.feature_names)}
        out = self.fn(cols)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (X.shape[0],)).copy()


def _design_matrix(X, schemas):
    """Numeric columns as-is; categoricals one-hot over levels[1:]; leading intercept."""
    parts = [np.ones((X.shape[0], 1))]
    for j, schema in enumerate(schemas):
        if schema.kind == NUMERIC:
            parts.append(X[:, j : j + 1])
        else:
            codes = X[:, j]
            for level_code in range(1, len(schema.levels)):
                parts.append((codes == level_code).astype(np.float64)[:, None])
    return np.hstack(parts)


class LinearModel(Predictor):
    """Least-squares linear fit (closed form via SVD)."""

    kind = "builtin_linear"

    def __init__(self, feature_names, feature_schemas, coef):
        self.feature_names = tuple(feature_names)
        self.feature_schemas = tuple(feature_schemas)
        self.coef = np.asarray(coef, dtype=np.float64)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def predict(self, X):
        return _design_matrix(X, self.feature_schemas) @ self.coef


class KnnModel(Predictor):
    """k-nearest-neighbor regression.

    Distance is Euclidean on z-scored numerics (constant columns contribute
    nothing) plus 0/1 mismatch on categoricals. Neighbor selection orders by
    (distance, training row index) so ties are deterministic; the neighbor
    mean is summed in training row order.
    """

    kind = "builtin_knn"

    def __init__(self, feature_names, feature_schemas, train_X, train_y, k):
        self.feature_names = tuple(feature_names)
        self.feature_schemas = tuple(feature_schemas)
        self.k = int(k)
        self._y = np.asarray(train_y, dtype=np.float64)
        X = np.asarray(train_X, dtype=np.float64)
        self._numeric = np.array([s.kind == NUMERIC for s in self.feature_schemas])
        mu = np.zeros(X.shape[1])
        sd = np.ones(X.shape[1])
        if self._numeric.any():
            mu[self._numeric] = X[:, self._numeric].mean(axis=0)
            s = X[:, self._numeric].std(axis=0)
            sd[self._numeric] = np.where(s > 0, s, 1.0)
        self._mu, self._sd = mu, sd
        self._train = self._standardize(X)

    def _standardize(self, X):
        Z = X.copy()
        Z[:, self._numeric] = (Z[:, self._numeric] - self._mu[self._numeric]) / self._sd[
            self._numeric
        ]
        return Z

    def predict(self, X):
        Q = self._standardize(np.asarray(X, dtype=np.float64))
        out = np.empty(Q.shape[0])
        chunk = max(1, 2_000_000 // max(1, self._train.shape[0]))
        for lo in range(0, Q.shape[0], chunk):
            q = Q[lo : lo + chunk]
            d2 = np.zeros((q.shape[0], self._train.shape[0]))
            for j in range(q.shape[1]):
                diff = q[:, j : j + 1] - self._train[None, :, j]
                if self._numeric[j]:
                    d2 += diff * diff
                else:
                    d2 += (diff != 0).astype(np.float64)
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            sel = np.sort(order, axis=1)
            out[lo : lo + chunk] = self._y[sel].mean(axis=1)
        return out


class ClassWrapper(Predictor):
    """Maps inner probability outputs to the logit scale; pass-through for regression."""

    kind = "class_wrapper"

    def __init__(self, inner: Predictor, task: str, positive_class=None, eps: float = 1e-6):
        if task not in (REGRESSION, BINARY_CLASSIFICATION):
            raise ValueError(f"unknown task {task!r}")
        if not (0.0 < eps < 0.5):
            raise ValueError("eps must lie in (0, 0.5)")
        if task == BINARY_CLASSIFICATION and positive_class is None:
            raise ValueError("classification requires a positive_class")
        self.inner = inner
        self.task = task
        self.positive_class = positive_class
        self.eps = float(eps)
        self.feature_names = inner.feature_names
        self.feature_schemas = inner.feature_schemas

    def predict(self, X):
        raw = self.inner.predict(X)
        if self.task == REGRESSION:
            return raw
        p = np.clip(raw, self.eps, 1.0 - self.eps)
        return np.log(p / (1.0 - p))


def wrap_class(p: Predictor, task: str, positive_class=None, eps: float = 1e-6) -> ClassWrapper:
    """Build the logit wrapper, validating positive_class against the fit when known."""
    levels = getattr(p, "response_levels", None)
    if task == BINARY_CLASSIFICATION and levels is not None and positive_class not in levels:
        raise ValueError(f"positive_class {positive_class!r} not among response levels {levels}")
    return ClassWrapper(p, task, positive_class, eps)


def logit_indicator(y_levels, codes, positive_code: int, eps: float) -> np.ndarray:
    """Observed class indicators on the clamped logit scale."""
    ind = np.where(np.asarray(codes) == positive_code, 1.0 - eps, eps)
    return np.log(ind / (1.0 - ind))


def _classification_target(d: Dataset, positive_class):
    schema = d.schema(d.response)
    if len(schema.levels) != 2:
        raise ValueError(
            f"classification needs a binary response; {d.response!r} has "
            f"{len(schema.levels)} levels"
        )
    if positive_class is None:
        positive_class = schema.levels[-1]
    if positive_class not in schema.levels:
        raise ValueError(f"positive_class {positive_class!r} not a level of {d.response!r}")
    positive_code = schema.levels.index(positive_class)
    y = (d.response_values() == positive_code).astype(np.float64)
    return y, positive_class


def fit_builtin(kind: str, d: Dataset, positive_class=None, **hyper) -> Predictor:
    """Fit one of the built-in models on a Dataset.

    Numeric response -> regression on the response values. Binary categorical
    response -> regression on the positive-class indicator, so predictions
    read as P(positive_class) and compose with wrap_class.

    Hyperparameters: knn takes k (>=1); bagged_trees takes n_trees (>=1),
    max_depth (>=1), and seed.
    """
    from .trees import fit_bagged_trees

    schema = d.schema(d.response)
    if schema.kind == NUMERIC:
        y = d.response_values()
        positive = None
    else:
        y, positive = _classification_target(d, positive_class)
    names = d.predictor_names
    schemas = tuple(d.schema(n) for n in names)
    X = d.feature_matrix(names)

    if kind == "linear":
        design = _design_matrix(X, schemas)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        model = LinearModel(names, schemas, coef)
    elif kind == "knn":
        k = int(hyper.get("k", 5))
        if k < 1:
            raise ValueError("knn requires k >= 1")
        model = KnnModel(names, schemas, X, y, k)
    elif kind == "bagged_trees":
        model = fit_bagged_trees(
            names,
            schemas,
            X,
            y,
            n_trees=int(hyper.get("n_trees", 50)),
            max_depth=int(hyper.get("max_depth", 8)),
            seed=int(hyper.get("seed", 0)),
        )
    else:
        raise ValueError(f"unknown builtin model kind {kind!r}")
    model.response_levels = schema.levels if schema.kind == CATEGORICAL else None
    model.positive_level = positive
    return model
