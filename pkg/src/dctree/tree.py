"""Axis-aligned binary regression trees and the greedy CART fitter.

The same RegressionTree structure is the student model, the genome of the
evolutionary search and the per-tree unit of every forest in this package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import DataError

SPLIT_GAIN_TOL = 1e-12


@dataclass
class RegressionTree:
    """Flat-array binary tree. Node 0 is the root; feature -1 marks a leaf.

    Rows route left when x[feature] <= threshold. Every node, internal ones
    included, carries a value and the training row count that reached it, so
    pruning is purely structural.
    """

    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_rows: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.n_rows = np.asarray(self.n_rows, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def node_depths(self) -> np.ndarray:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        stack = [0]
        while stack:
            i = stack.pop()
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                depths[l] = depths[r] = depths[i] + 1
                stack.extend((int(l), int(r)))
        return depths

    def depth(self) -> int:
        return int(self.node_depths().max())

    def parents(self) -> np.ndarray:
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                out[self.left[i]] = i
                out[self.right[i]] = i
        return out

    def validate(self):
        n = self.n_nodes
        for name in ("threshold", "left", "right", "value", "n_rows"):
            if len(getattr(self, name)) != n:
                raise DataError(f"tree array '{name}' has wrong length")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            i = stack.pop()
            if i < 0 or i >= n:
                raise DataError(f"child id {i} out of range")
            if seen[i]:
                raise DataError(f"node {i} reachable more than once")
            seen[i] = True
            if self.feature[i] >= 0:
                if self.feature[i] >= self.n_features:
                    raise DataError(f"node {i} splits on feature {self.feature[i]} of {self.n_features}")
                if not np.isfinite(self.threshold[i]):
                    raise DataError(f"node {i} has non-finite threshold")
                stack.extend((int(self.left[i]), int(self.right[i])))
            elif self.left[i] != -1 or self.right[i] != -1:
                raise DataError(f"leaf {i} has children")
        if not seen.all():
            raise DataError(f"unreachable nodes: {np.flatnonzero(~seen).tolist()}")

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} feature columns, got shape {x.shape}")
        if x.size and not np.all(np.isfinite(x)):
            raise DataError("prediction input contains non-finite values")
        return np.ascontiguousarray(x)

    def route(self, x: np.ndarray) -> np.ndarray:
        """Leaf node id for every row."""
        x = self._check_input(x)
        if x.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        return _kernels.route_rows(self.feature, self.threshold, self.left, self.right, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.route(x)]

    def copy(self) -> "RegressionTree":
        return RegressionTree(
            n_features=self.n_features,
            feature=self.feature.copy(),
            threshold=self.threshold.copy(),
            left=self.left.copy(),
            right=self.right.copy(),
            value=self.value.copy(),
            n_rows=self.n_rows.copy(),
        )

    def compact(self) -> "RegressionTree":
        """Preorder-renumbered copy, dropping any unreachable slots."""
        order: list[int] = []
        stack = [0]
        while stack:
            i = stack.pop()
            order.append(i)
            if self.feature[i] >= 0:
                stack.append(int(self.right[i]))
                stack.append(int(self.left[i]))
        remap = {old: new for new, old in enumerate(order)}
        idx = np.array(order, dtype=np.int64)
        feature = self.feature[idx]
        left = np.array([remap[int(v)] if v >= 0 else -1 for v in self.left[idx]], dtype=np.int64)
        right = np.array([remap[int(v)] if v >= 0 else -1 for v in self.right[idx]], dtype=np.int64)
        return RegressionTree(
            n_features=self.n_features,
            feature=feature,
            threshold=self.threshold[idx],
            left=left,
            right=right,
            value=self.value[idx],
            n_rows=self.n_rows[idx],
        )

    def prune_to_depth(self, max_depth: int) -> "RegressionTree":
        """Copy truncated so no node sits deeper than max_depth."""
        if max_depth < 0:
            raise DataError(f"max_depth must be >= 0, got {max_depth}")
        t = self.copy()
        depths = t.node_depths()
        cut = (depths >= max_depth) & (t.feature >= 0)
        t.feature[cut] = -1
        t.threshold[cut] = np.nan
        t.left[cut] = -1
        t.right[cut] = -1
        return t.compact()

    def to_dict(self) -> dict:
        t = self.compact()
        nodes = []
        for i in range(t.n_nodes):
            node = {"value": float(t.value[i]), "n": int(t.n_rows[i])}
            if t.feature[i] >= 0:
                node.update(
                    feature=int(t.feature[i]),
                    threshold=float(t.threshold[i]),
                    left=int(t.left[i]),
                    right=int(t.right[i]),
                )
            nodes.append(node)
        return {"n_features": t.n_features, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        nodes = doc["nodes"]
        n = len(nodes)
        t = cls(
            n_features=int(doc["n_features"]),
            feature=np.array([nd.get("feature", -1) for nd in nodes], dtype=np.int64),
            threshold=np.array([nd.get("threshold", np.nan) for nd in nodes], dtype=np.float64),
            left=np.array([nd.get("left", -1) for nd in nodes], dtype=np.int64),
            right=np.array([nd.get("right", -1) for nd in nodes], dtype=np.int64),
            value=np.array([nd["value"] for nd in nodes], dtype=np.float64),
            n_rows=np.array([nd["n"] for nd in nodes], dtype=np.int64),
        )
        if n == 0:
            raise DataError("tree document has no nodes")
        t.validate()
        return t


def leaf_tree(n_features: int, value: float, n_rows: int) -> RegressionTree:
    return RegressionTree(
        n_features=n_features,
        feature=np.array([-1], dtype=np.int64),
        threshold=np.array([np.nan]),
        left=np.array([-1], dtype=np.int64),
        right=np.array([-1], dtype=np.int64),
        value=np.array([float(value)]),
        n_rows=np.array([int(n_rows)], dtype=np.int64),
    )


@dataclass(frozen=True)
class DistillationTarget:
    """Covariates plus the teacher predictions the student regresses on."""

    x: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.t, dtype=np.float64))
        if x.ndim != 2:
            raise DataError(f"target x must be 2-dimensional, got shape {x.shape}")
        if t.shape != (x.shape[0],):
            raise DataError(f"target t has shape {t.shape}, expected ({x.shape[0]},)")
        if x.shape[0] == 0:
            raise DataError("distillation target is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise DataError("distillation target contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct sorted values."""
    v = np.unique(values)
    if v.size < 2:
        return np.empty(0)
    return 0.5 * (v[:-1] + v[1:])


def _best_split_of_feature(xcol, t, min_leaf):
    """Best (gain, threshold) for one feature, or None.

    Gain is the SSE reduction of splitting; among equal gains the lowest
    threshold wins because candidates are scanned in ascending order.
    """
    order = np.argsort(xcol, kind="stable")
    xs = xcol[order]
    ts = t[order]
    n = len(ts)
    cs = np.cumsum(ts)
    total = cs[-1]
    k = np.flatnonzero(xs[:-1] < xs[1:])
    if k.size == 0:
        return None
    n_left = k + 1
    n_right = n - n_left
    ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    k = k[ok]
    if k.size == 0:
        return None
    n_left = n_left[ok]
    s_left = cs[k]
    gain = s_left**2 / n_left + (total - s_left) ** 2 / (n - n_left) - total**2 / n
    j = int(np.argmax(gain))
    thr = 0.5 * (xs[k[j]] + xs[k[j] + 1])
    return float(gain[j]), float(thr)


def fit_cart(target: DistillationTarget, max_depth: int, min_leaf: int) -> RegressionTree:
    """Greedy variance-reduction CART on the distillation target.

    Splits maximize SSE reduction; thresholds are midpoints of consecutive
    distinct feature values; equal-gain ties go to the lowest feature id and
    then the lowest threshold. Growth stops at max_depth, below 2 * min_leaf
    rows, or when no split improves SSE by more than a small tolerance.
    """
    if max_depth < 0:
        raise DataError(f"max_depth must be >= 0, got {max_depth}")
    if min_leaf < 1:
        raise DataError(f"min_leaf must be >= 1, got {min_leaf}")
    if target.n < 2 * min_leaf:
        raise DataError(f"target has {target.n} rows, need at least {2 * min_leaf}")

    x, t = target.x, target.t
    feature, threshold, left, right, value, n_rows = [], [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(t[rows].mean()))
        n_rows.append(len(rows))

        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return node
        best = None
        for j in range(x.shape[1]):
            found = _best_split_of_feature(x[rows, j], t[rows], min_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], j, found[1])
        if best is None or best[0] <= SPLIT_GAIN_TOL:
            return node
        _, j, thr = best
        go_left = x[rows, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = grow(rows[go_left], depth + 1)
        right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(target.n), 0)
    tree = RegressionTree(
        n_features=target.p,
        feature=np.array(feature),
        threshold=np.array(threshold),
        left=np.array(left),
        right=np.array(right),
        value=np.array(value),
        n_rows=np.array(n_rows),
    )
    return tree


def predict_tree(tree: RegressionTree, x_new: np.ndarray) -> np.ndarray:
    return tree.predict(x_new)
