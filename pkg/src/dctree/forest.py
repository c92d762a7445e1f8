"""Honest subsampled regression forests used as nuisance models.

Individual trees are grown by scikit-learn's CART regressor on seeded row
subsamples and converted to this package's flat tree arrays; subsampling,
out-of-bag accounting and serialization are handled here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .dataset import DataError, Dataset
from .tree import RegressionTree, leaf_tree

PROPENSITY_CLIP = (0.01, 0.99)


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 500
    subsample_fraction: float = 0.5
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise DataError(f"num_trees must be >= 1, got {self.num_trees}")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise DataError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}")
        if self.mtry is not None and self.mtry < 1:
            raise DataError(f"mtry must be >= 1, got {self.mtry}")
        if self.min_leaf < 1:
            raise DataError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError(f"max_depth must be >= 0, got {self.max_depth}")


def resolve_mtry(mtry: int | None, p: int) -> int:
    if mtry is None:
        return int(math.ceil(math.sqrt(p)))
    return min(mtry, p)


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _sklearn_to_tree(model: DecisionTreeRegressor, n_features: int) -> RegressionTree:
    t = model.tree_
    feature = np.where(t.children_left >= 0, t.feature, -1).astype(np.int64)
    return RegressionTree(
        n_features=n_features,
        feature=feature,
        threshold=np.where(feature >= 0, t.threshold, np.nan),
        left=np.where(feature >= 0, t.children_left, -1).astype(np.int64),
        right=np.where(feature >= 0, t.children_right, -1).astype(np.int64),
        value=t.value.reshape(-1).astype(np.float64),
        n_rows=t.n_node_samples.astype(np.int64),
    )


@dataclass
class RegressionForest:
    trees: list[RegressionTree]
    subsamples: list[np.ndarray]
    params: ForestParams
    target_name: str
    n_features: int
    train_n: int
    train_mean: float
    train_fingerprint: str
    constant_target: bool = False


@dataclass(frozen=True)
class OobPrediction:
    """OOB values plus a mask of rows covered by at least one tree."""

    values: np.ndarray
    covered: np.ndarray


def select_target(d: Dataset, target) -> tuple[np.ndarray, str]:
    if isinstance(target, str):
        if target == "y":
            return d.y, "y"
        if target == "w":
            return d.w, "w"
        raise DataError(f"unknown target selector '{target}'")
    vec = np.asarray(target, dtype=np.float64)
    if vec.shape != (d.n,):
        raise DataError(f"target vector has shape {vec.shape}, expected ({d.n},)")
    if not np.all(np.isfinite(vec)):
        raise DataError("target vector contains non-finite values")
    return vec, "custom"


def fit_regression_forest(d: Dataset, target, params: ForestParams) -> RegressionForest:
    """Fit a subsampled CART forest on the selected target column.

    Each tree gets its own seeded row subsample (without replacement) and
    per-node random feature subsets of size mtry. A constant target yields a
    forest of single-leaf trees with a warning flag rather than an error.
    """
    tvec, tname = select_target(d, target)
    if d.n < 2 * params.min_leaf:
        raise DataError(f"n={d.n} too small for min_leaf={params.min_leaf}")
    size = max(1, int(math.ceil(params.subsample_fraction * d.n)))
    mtry = resolve_mtry(params.mtry, d.p)
    constant = bool(np.all(tvec == tvec[0]))

    trees: list[RegressionTree] = []
    subsamples: list[np.ndarray] = []
    for i in range(params.num_trees):
        rng = _tree_rng(params.seed, i)
        rows = np.sort(rng.choice(d.n, size=size, replace=False))
        subsamples.append(rows)
        if constant:
            trees.append(leaf_tree(d.p, float(tvec[0]), len(rows)))
            continue
        model = DecisionTreeRegressor(
            max_features=mtry,
            min_samples_leaf=params.min_leaf,
            max_depth=params.max_depth,
            random_state=int(rng.integers(2**31 - 1)),
        )
        model.fit(d.x[rows], tvec[rows])
        trees.append(_sklearn_to_tree(model, d.p))

    return RegressionForest(
        trees=trees,
        subsamples=subsamples,
        params=params,
        target_name=tname,
        n_features=d.p,
        train_n=d.n,
        train_mean=float(tvec.mean()),
        train_fingerprint=d.fingerprint(),
        constant_target=constant,
    )


def predict(f: RegressionForest, x_new: np.ndarray) -> np.ndarray:
    """Mean prediction over all trees."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2 or x_new.shape[1] != f.n_features:
        raise DataError(f"expected {f.n_features} feature columns, got shape {x_new.shape}")
    if x_new.shape[0] == 0:
        return np.empty(0)
    acc = np.zeros(x_new.shape[0])
    for tree in f.trees:
        acc += tree.predict(x_new)
    return acc / len(f.trees)


def predict_oob(f: RegressionForest, d: Dataset) -> OobPrediction:
    """Out-of-bag prediction on the training data.

    Row i averages only trees whose subsample excluded i. Rows in every
    subsample fall back to the training mean and are flagged uncovered.
    """
    if d.fingerprint() != f.train_fingerprint:
        raise DataError("dataset does not match the forest's training data fingerprint")
    sums = np.zeros(d.n)
    counts = np.zeros(d.n, dtype=np.int64)
    in_sample = np.zeros(d.n, dtype=bool)
    for tree, rows in zip(f.trees, f.subsamples):
        in_sample[:] = False
        in_sample[rows] = True
        oob_rows = np.flatnonzero(~in_sample)
        if oob_rows.size:
            sums[oob_rows] += tree.predict(d.x[oob_rows])
            counts[oob_rows] += 1
    covered = counts > 0
    values = np.where(covered, sums / np.maximum(counts, 1), f.train_mean)
    return OobPrediction(values=values, covered=covered)


def clip_propensity(e: np.ndarray) -> np.ndarray:
    """Bound propensity predictions away from 0 and 1 for stable weighting."""
    lo, hi = PROPENSITY_CLIP
    out = np.clip(e, lo, hi)
    assert np.all((out >= lo) & (out <= hi))
    return out
