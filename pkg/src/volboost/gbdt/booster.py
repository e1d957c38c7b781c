"""Boosting loop, prediction, ensembles and model serialisation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..losses import LossSpec, initial_prediction, loss_gradient_hessian
from . import _kernels
from .binning import BinMapper
from .params import BoostParams
from .sampling import sample_rows
from .tree import RegressionTree

FORMAT_VERSION = 1


@dataclass
class BoostedModel:
    """Fitted additive tree model ``F_0 + eta * sum_m tree_m(x)``."""

    base_prediction: float
    learning_rate: float
    loss: LossSpec
    mapper: BinMapper
    feature_names: list
    trees: list = field(default_factory=list)
    gain_totals: np.ndarray | None = None
    params: BoostParams | None = None

    def __post_init__(self):
        if self.gain_totals is None:
            self.gain_totals = np.zeros(self.mapper.n_features)
        self._packed = None

    @property
    def n_features(self) -> int:
        return self.mapper.n_features

    def _pack(self):
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
            offsets[1:] = np.cumsum(sizes)

            def cat(name, dtype):
                if not self.trees:
                    return np.zeros(0, dtype=dtype)
                return np.ascontiguousarray(
                    np.concatenate([getattr(t, name) for t in self.trees]), dtype=dtype)

            self._packed = (cat("feature", np.int32), cat("threshold", np.int32),
                            cat("left", np.int32), cat("right", np.int32),
                            cat("value", np.float64), offsets)
        return self._packed

    def _check_schema(self, X):
        names = getattr(X, "columns", None)
        if names is not None:
            missing = [c for c in self.feature_names if c not in set(names)]
            if missing:
                raise ValueError(f"schema mismatch: missing columns {missing}")
            X = X[self.feature_names]
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"schema mismatch: model has {self.n_features} features, input shape {X.shape}")
        return X

    def predict_binned(self, binned) -> np.ndarray:
        f, t, l, r, v, off = self._pack()
        return _kernels.predict_trees(np.ascontiguousarray(binned, dtype=np.uint8),
                                      f, t, l, r, v, off, self.base_prediction,
                                      self.learning_rate)

    def predict(self, X) -> np.ndarray:
        X = self._check_schema(X)
        return self.predict_binned(self.mapper.transform(X))

    def to_dict(self) -> dict:
        return {
            "format": "volboost.model",
            "version": FORMAT_VERSION,
            "base_prediction": self.base_prediction,
            "learning_rate": self.learning_rate,
            "loss": self.loss.to_dict(),
            "params": self.params.to_dict() if self.params else None,
            "feature_names": list(self.feature_names),
            "bins": self.mapper.to_dict(),
            "gain_totals": self.gain_totals.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        if d.get("format") != "volboost.model":
            raise ValueError("not a serialised volboost model")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        params = BoostParams.from_dict(d["params"]) if d.get("params") else None
        return cls(
            base_prediction=float(d["base_prediction"]),
            learning_rate=float(d["learning_rate"]),
            loss=LossSpec(**d["loss"]),
            mapper=BinMapper.from_dict(d["bins"]),
            feature_names=list(d["feature_names"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            gain_totals=np.asarray(d["gain_totals"], dtype=float),
            params=params,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BoostedModel":
        return cls.from_dict(json.loads(text))


def _feature_subset(n: int, fraction: float, rng) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n, dtype=np.int64)
    k = max(1, int(math.ceil(fraction * n - 1e-9)))
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def fit(X, y, params: BoostParams | None = None, loss: LossSpec | None = None,
        feature_names=None, callback=None) -> BoostedModel:
    """Fit a boosted tree model.

    Parameters
    ----------
    X : array-like of shape (N, n)
    y : array-like of shape (N,)
    params : BoostParams
    loss : LossSpec
    feature_names : list of str, optional
    callback : callable, optional
        Called as ``callback(m, F)`` after each iteration with the cached
        training predictions.
    """
    params = params or BoostParams()
    loss = loss or LossSpec()
    if feature_names is None and hasattr(X, "columns"):
        feature_names = [str(c) for c in X.columns]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-d array")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    n_rows, n_feat = X.shape
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(n_feat)]
    if len(feature_names) != n_feat:
        raise ValueError("feature_names length does not match X")

    mapper = BinMapper.fit(X, params.max_bin)
    binned = mapper.transform(X)
    n_bins = mapper.n_bins
    max_bins = int(n_bins.max())
    base = initial_prediction(loss, y)
    F = np.full(n_rows, base)
    rng = np.random.default_rng(params.seed)
    renew = loss.kind == "pinball" and loss.renew_leaves
    max_leaves = -1 if params.num_leaves is None else int(params.num_leaves)

    trees = []
    gains = np.zeros(n_feat)
    bag = None
    for m in range(params.n_estimators):
        g, h = loss_gradient_hessian(loss, y, F)
        bag = sample_rows(g, params, m, rng, bag)
        rows, w = bag
        if params.sampler == "goss":
            wf = np.zeros(n_rows)
            wf[rows] = w
            g = g * wf
            h = h * wf
        feats = _feature_subset(n_feat, params.feature_fraction, rng)
        arrays = _kernels.grow_tree(
            binned, rows, np.ascontiguousarray(g), np.ascontiguousarray(h), feats,
            n_bins, max_bins, params.max_depth, params.min_data_in_leaf,
            params.reg_lambda, params.reg_alpha, params.reg_gamma, max_leaves)
        tree = RegressionTree.from_arrays(arrays)
        leaf_of_row = tree.apply_binned(binned)
        if renew:
            # leaf output becomes the lower inverse-cdf q-quantile of its residuals
            _kernels.leaf_quantiles(leaf_of_row, rows, y - F, loss.q, tree.value)
        F += params.learning_rate * tree.value[leaf_of_row]
        internal = ~tree.is_leaf
        np.add.at(gains, tree.feature[internal], tree.gain[internal])
        trees.append(tree)
        if callback is not None:
            callback(m, F)

    return BoostedModel(base_prediction=base, learning_rate=params.learning_rate,
                        loss=loss, mapper=mapper, feature_names=list(feature_names),
                        trees=trees, gain_totals=gains, params=params)


def predict(model: BoostedModel, X) -> np.ndarray:
    return model.predict(X)


def fit_ensemble(X, y, params: BoostParams | None = None, loss: LossSpec | None = None,
                 n_members: int = 1, feature_names=None) -> list:
    """``n_members`` models that differ only in seed (``seed + k``)."""
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    params = params or BoostParams()
    return [fit(X, y, params.with_(seed=params.seed + k), loss, feature_names)
            for k in range(n_members)]


def predict_ensemble(models, X) -> np.ndarray:
    """Arithmetic mean of member predictions on the training scale."""
    preds = np.stack([m.predict(X) for m in models])
    return preds.sum(axis=0) / len(models)
