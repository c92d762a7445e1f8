"""Honest causal forest: the teacher model.

Each tree is grown on a subsample split into a fit half (chooses splits) and
an estimation half (supplies every node's effect value), after local
centering of outcome and treatment by out-of-bag nuisance predictions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import ceil

import numpy as np

from .dataset import DataError, Dataset
from .estimate import NuisanceValues
from .forest import (
    ForestParams,
    OobPrediction,
    RegressionForest,
    clip_propensity,
    fit_regression_forest,
    predict,
    predict_oob,
    resolve_mtry,
)
from .tree import RegressionTree

DEFAULT_CAUSAL_TREES = 2000


@dataclass(frozen=True)
class CausalForestParams:
    num_trees: int = DEFAULT_CAUSAL_TREES
    subsample_fraction: float = 0.5
    honest_fraction: float = 0.5
    mtry: int | None = None
    min_leaf_treated: int = 5
    min_leaf_control: int = 5
    max_depth: int | None = None
    seed: int = 0
    nuisance: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self):
        if self.num_trees < 1:
            raise DataError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise DataError(f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}")
        if not 0.0 < self.honest_fraction < 1.0:
            raise DataError(f"honest_fraction must be in (0, 1), got {self.honest_fraction}")
        if self.mtry is not None and self.mtry < 1:
            raise DataError(f"mtry must be >= 1, got {self.mtry}")
        if self.min_leaf_treated < 1 or self.min_leaf_control < 1:
            raise DataError("per-arm leaf minima must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError(f"max_depth must be >= 0, got {self.max_depth}")


@dataclass
class NuisanceForests:
    """The four regression forests behind centering and AIPW scores.

    m predicts the outcome and e the treatment, both fit on all rows; mu0 and
    mu1 are outcome forests fit on the control and treated rows only. For
    training rows, values come from each forest's out-of-bag predictions
    (rows outside an arm-specific forest's training set use a plain predict).
    """

    m: RegressionForest
    e: RegressionForest
    mu0: RegressionForest
    mu1: RegressionForest
    control_rows: np.ndarray
    treated_rows: np.ndarray
    train_n: int
    train_fingerprint: str
    _cache: dict = field(default_factory=dict, repr=False)

    def _check(self, d: Dataset):
        if d.fingerprint() != self.train_fingerprint:
            raise DataError("dataset does not match the one the nuisance forests were fit on")

    def oob_m(self, d: Dataset) -> np.ndarray:
        self._check(d)
        if "m" not in self._cache:
            self._cache["m"] = predict_oob(self.m, d).values
        return self._cache["m"]

    def oob_e(self, d: Dataset) -> np.ndarray:
        """Out-of-bag propensity, clipped away from 0 and 1."""
        self._check(d)
        if "e" not in self._cache:
            self._cache["e"] = clip_propensity(predict_oob(self.e, d).values)
        return self._cache["e"]

    def centered_residuals(self, d: Dataset) -> tuple[np.ndarray, np.ndarray]:
        """(Y - m_oob(X), W - e_oob(X)) for every training row."""
        return d.y - self.oob_m(d), d.w.astype(np.float64) - self.oob_e(d)

    def _arm_values(self, d: Dataset) -> tuple[np.ndarray, np.ndarray]:
        if "arm" not in self._cache:
            mu0 = predict(self.mu0, d.x)
            mu1 = predict(self.mu1, d.x)
            # own training rows must not see themselves
            mu0[self.control_rows] = predict_oob(self.mu0, d.subset(self.control_rows)).values
            mu1[self.treated_rows] = predict_oob(self.mu1, d.subset(self.treated_rows)).values
            self._cache["arm"] = (mu0, mu1)
        return self._cache["arm"]

    def values_for_rows(self, d: Dataset, rows: np.ndarray) -> NuisanceValues:
        """Out-of-bag-honest nuisance values for a subset of training rows."""
        self._check(d)
        rows = np.asarray(rows, dtype=np.int64)
        mu0, mu1 = self._arm_values(d)
        return NuisanceValues(e=self.oob_e(d)[rows], mu0=mu0[rows], mu1=mu1[rows])

    def values_for_new(self, x_new: np.ndarray) -> NuisanceValues:
        """Plain forest predictions for rows outside the training set."""
        return NuisanceValues(
            e=clip_propensity(predict(self.e, x_new)),
            mu0=predict(self.mu0, x_new),
            mu1=predict(self.mu1, x_new),
        )


def _derived_seed(seed: int, key: tuple[int, ...]) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


def fit_nuisance_forests(d: Dataset, params: ForestParams, seed: int = 0) -> NuisanceForests:
    d.require_both_arms()
    control = np.flatnonzero(d.w == 0).astype(np.int64)
    treated = np.flatnonzero(d.w == 1).astype(np.int64)
    min_rows = 2 * params.min_leaf
    if len(control) < min_rows or len(treated) < min_rows:
        raise DataError("too few rows in a treatment arm to fit outcome forests")
    forests = {}
    for k, (name, data, target) in enumerate([
        ("m", d, "y"),
        ("e", d, "w"),
        ("mu0", d.subset(control), "y"),
        ("mu1", d.subset(treated), "y"),
    ]):
        forests[name] = fit_regression_forest(
            data, target, replace(params, seed=_derived_seed(seed, (1, k))))
    return NuisanceForests(
        m=forests["m"], e=forests["e"], mu0=forests["mu0"], mu1=forests["mu1"],
        control_rows=control, treated_rows=treated,
        train_n=d.n, train_fingerprint=d.fingerprint(),
    )


@dataclass
class CausalTree:
    """One honest tree: structure from fit rows, values from estimation rows."""

    tree: RegressionTree
    fit_rows: np.ndarray
    est_rows: np.ndarray
    degenerate: bool = False


@dataclass
class CausalForest:
    trees: list[CausalTree]
    nuisances: NuisanceForests
    params: CausalForestParams
    n_features: int
    train_n: int
    train_fingerprint: str
    degenerate_trees: int = 0


def node_effect_values(
    tree: RegressionTree,
    x: np.ndarray,
    y_c: np.ndarray,
    w_c: np.ndarray,
    rows: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node ratio estimates sum(w_c*y_c)/sum(w_c^2) over routed rows.

    Returns (values, counts) for every node, children aggregated into
    parents. Depends only on the rows' covariates and centered residuals,
    never on the data that chose the splits.
    """
    c = tree.n_nodes
    if len(rows) == 0:
        return np.zeros(c), np.zeros(c, dtype=np.int64)
    assign = tree.route(x[rows])
    num = np.bincount(assign, weights=(w_c * y_c)[rows], minlength=c)
    den = np.bincount(assign, weights=(w_c * w_c)[rows], minlength=c)
    cnt = np.bincount(assign, minlength=c)
    parents = tree.parents()
    for i in np.argsort(-tree.node_depths(), kind="stable"):
        par = parents[i]
        if par >= 0:
            num[par] += num[i]
            den[par] += den[i]
            cnt[par] += cnt[i]
    values = np.zeros(c)
    np.divide(num, den, out=values, where=den > 0)
    return values, cnt


def _best_causal_split(
    x: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    fit_idx: np.ndarray,
    est_treated: np.ndarray,
    est_control: np.ndarray,
    feats: np.ndarray,
    mlt: int,
    mlc: int,
) -> tuple[float, int, float] | None:
    """Best (criterion, feature, threshold) over candidate features.

    a = w_c * y_c and b = w_c^2 are the per-row ratio-estimator terms. The
    criterion is n_L n_R / n^2 * (tau_L - tau_R)^2 on fit rows; candidates
    violating the per-arm estimation-row minima are discarded.
    """
    n = len(fit_idx)
    best = None
    for j in feats:
        xf = x[fit_idx, j]
        order = np.argsort(xf, kind="stable")
        xs = xf[order]
        cut = np.flatnonzero(xs[:-1] < xs[1:])
        if len(cut) == 0:
            continue
        thr = 0.5 * (xs[cut] + xs[cut + 1])

        et = np.sort(x[est_treated, j])
        ec = np.sort(x[est_control, j])
        lt = np.searchsorted(et, thr, side="right")
        lc = np.searchsorted(ec, thr, side="right")
        ok = (lt >= mlt) & (len(et) - lt >= mlt) & (lc >= mlc) & (len(ec) - lc >= mlc)
        if not ok.any():
            continue

        ca = np.cumsum(a[fit_idx][order])
        cb = np.cumsum(b[fit_idx][order])
        n_l = cut + 1
        den_l = cb[cut]
        den_r = cb[-1] - cb[cut]
        ok &= (den_l > 0) & (den_r > 0)
        if not ok.any():
            continue
        tau_l = np.zeros(len(cut))
        tau_r = np.zeros(len(cut))
        np.divide(ca[cut], den_l, out=tau_l, where=ok)
        np.divide(ca[-1] - ca[cut], den_r, out=tau_r, where=ok)
        crit = np.where(ok, n_l * (n - n_l) / (n * n) * (tau_l - tau_r) ** 2, -np.inf)
        k = int(np.argmax(crit))
        if crit[k] > 0 and (best is None or crit[k] > best[0]):
            best = (float(crit[k]), int(j), float(thr[k]))
    return best


def _grow_causal_structure(
    x: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    w: np.ndarray,
    fit_rows: np.ndarray,
    est_rows: np.ndarray,
    rng: np.random.Generator,
    mtry: int,
    mlt: int,
    mlc: int,
    max_depth: int | None,
) -> RegressionTree:
    p = x.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []

    def grow(fit_idx: np.ndarray, est_idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        if max_depth is not None and depth >= max_depth:
            return node
        if len(fit_idx) < 2:
            return node
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
        est_t = est_idx[w[est_idx] == 1]
        est_c = est_idx[w[est_idx] == 0]
        found = _best_causal_split(x, a, b, fit_idx, est_t, est_c, feats, mlt, mlc)
        if found is None:
            return node
        _, j, thr = found
        feature[node] = j
        threshold[node] = thr
        go_left_fit = x[fit_idx, j] <= thr
        go_left_est = x[est_idx, j] <= thr
        left[node] = grow(fit_idx[go_left_fit], est_idx[go_left_est], depth + 1)
        right[node] = grow(fit_idx[~go_left_fit], est_idx[~go_left_est], depth + 1)
        return node

    grow(fit_rows, est_rows, 0)
    c = len(feature)
    return RegressionTree(
        n_features=p,
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.zeros(c, dtype=np.float64),
        n_rows=np.zeros(c, dtype=np.int64),
    )


def fit_causal_forest(
    d: Dataset,
    params: CausalForestParams | None = None,
    nuisances: NuisanceForests | None = None,
) -> CausalForest:
    """Fit the honest causal forest.

    Nuisance forests are fit first (unless supplied), outcome and treatment
    are centered by their out-of-bag predictions, then each tree draws a
    subsample, splits it into fit and estimation halves, grows its structure
    on the fit half and takes every node value from the estimation half.
    """
    params = params or CausalForestParams()
    d.require_both_arms()
    floor_n = 4 * (params.min_leaf_treated + params.min_leaf_control)
    if d.n < floor_n:
        raise DataError(f"need at least {floor_n} rows, got {d.n}")
    if nuisances is None:
        nuisances = fit_nuisance_forests(d, params.nuisance, seed=_derived_seed(params.seed, (2,)))
    elif nuisances.train_fingerprint != d.fingerprint():
        raise DataError("nuisance forests were fit on a different dataset")

    y_c, w_c = nuisances.centered_residuals(d)
    a = w_c * y_c
    b = w_c * w_c
    w = d.w
    mtry = resolve_mtry(params.mtry, d.p)
    size = ceil(params.subsample_fraction * d.n)
    n_fit = int(params.honest_fraction * size)
    if n_fit < 1 or size - n_fit < 1:
        raise DataError("subsample too small to split into fit and estimation halves")

    trees = []
    degenerate = 0
    for i in range(params.num_trees):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=params.seed, spawn_key=(0, i)))
        sub = rng.permutation(d.n)[:size]
        fit_rows = np.sort(sub[:n_fit])
        est_rows = np.sort(sub[n_fit:])
        bad = len(est_rows) == 0 or float(b[est_rows].sum()) == 0.0
        if bad:
            degenerate += 1
            structure = RegressionTree(
                n_features=d.p,
                feature=np.array([-1], dtype=np.int64),
                threshold=np.array([np.nan]),
                left=np.array([-1], dtype=np.int64),
                right=np.array([-1], dtype=np.int64),
                value=np.zeros(1),
                n_rows=np.array([len(est_rows)], dtype=np.int64),
            )
        else:
            structure = _grow_causal_structure(
                d.x, a, b, w, fit_rows, est_rows, rng, mtry,
                params.min_leaf_treated, params.min_leaf_control, params.max_depth)
            values, counts = node_effect_values(structure, d.x, y_c, w_c, est_rows)
            structure.value[:] = values
            structure.n_rows[:] = counts
        trees.append(CausalTree(tree=structure, fit_rows=fit_rows, est_rows=est_rows,
                                degenerate=bool(bad)))
    if degenerate:
        warnings.warn(f"{degenerate} trees had a degenerate root (no usable estimation rows)")
    return CausalForest(
        trees=trees, nuisances=nuisances, params=params, n_features=d.p,
        train_n=d.n, train_fingerprint=d.fingerprint(), degenerate_trees=degenerate,
    )


def predict_cate(f: CausalForest, x_new: np.ndarray) -> np.ndarray:
    """Mean over trees of the routed node values."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2 or x_new.shape[1] != f.n_features:
        raise DataError(f"expected {f.n_features} columns, got shape {x_new.shape}")
    if x_new.shape[0] == 0:
        return np.zeros(0)
    out = np.zeros(x_new.shape[0])
    for ct in f.trees:
        out += ct.tree.predict(x_new)
    return out / len(f.trees)


def predict_oob_cate(f: CausalForest, d: Dataset) -> OobPrediction:
    """Per-row effect averaged over trees whose subsample excluded the row.

    Rows inside every subsample fall back to the full-forest prediction and
    are flagged covered=False.
    """
    if d.fingerprint() != f.train_fingerprint:
        raise DataError("dataset does not match the forest's training data")
    total = np.zeros(d.n)
    hits = np.zeros(d.n, dtype=np.int64)
    for ct in f.trees:
        inside = np.zeros(d.n, dtype=bool)
        inside[ct.fit_rows] = True
        inside[ct.est_rows] = True
        rows = np.flatnonzero(~inside)
        if len(rows) == 0:
            continue
        total[rows] += ct.tree.predict(d.x[rows])
        hits[rows] += 1
    covered = hits > 0
    values = np.zeros(d.n)
    values[covered] = total[covered] / hits[covered]
    if not covered.all():
        values[~covered] = predict_cate(f, d.x[~covered])
    return OobPrediction(values=values, covered=covered)


def extract_pruned_tree(f: CausalForest, index: int, max_depth: int) -> CausalTree:
    """Copy of the tree at `index` cut to max_depth; values stay honest."""
    if not 0 <= index < len(f.trees):
        raise DataError(f"tree index {index} out of range")
    src = f.trees[index]
    return CausalTree(tree=src.tree.prune_to_depth(max_depth),
                      fit_rows=src.fit_rows, est_rows=src.est_rows,
                      degenerate=src.degenerate)


def _rloss_terms(y, w, m_hat, e_hat, pred) -> np.ndarray:
    return ((y - m_hat) - (w - e_hat) * pred) ** 2


def best_tree_by_rloss(
    f: CausalForest,
    d_validation: Dataset,
    max_depth: int = 4,
) -> int:
    """Index of the forest tree whose depth-pruned copy has the lowest R-Loss.

    On the forest's own training data each tree is scored on its out-of-bag
    rows with out-of-bag nuisances; on other data all trees share the full
    sample and plain nuisance predictions. Ties keep the lowest index.
    """
    if not f.trees:
        raise DataError("forest has no trees")
    if d_validation.p != f.n_features:
        raise DataError("validation data has the wrong number of columns")
    own_train = d_validation.fingerprint() == f.train_fingerprint
    if own_train:
        m_hat = f.nuisances.oob_m(d_validation)
        e_hat = f.nuisances.oob_e(d_validation)
    else:
        m_hat = predict(f.nuisances.m, d_validation.x)
        e_hat = clip_propensity(predict(f.nuisances.e, d_validation.x))
    y = d_validation.y
    w = d_validation.w.astype(np.float64)

    losses = np.full(len(f.trees), np.inf)
    for i, ct in enumerate(f.trees):
        pruned = ct.tree.prune_to_depth(max_depth)
        if own_train:
            inside = np.zeros(d_validation.n, dtype=bool)
            inside[ct.fit_rows] = True
            inside[ct.est_rows] = True
            rows = np.flatnonzero(~inside)
            if len(rows) == 0:
                continue
            pred = pruned.predict(d_validation.x[rows])
            losses[i] = _rloss_terms(y[rows], w[rows], m_hat[rows], e_hat[rows], pred).mean()
        else:
            pred = pruned.predict(d_validation.x)
            losses[i] = _rloss_terms(y, w, m_hat, e_hat, pred).mean()
    if not np.isfinite(losses).any():
        raise DataError("no tree could be scored")
    return int(np.argmin(losses))


def mean_tree_prediction(
    f: CausalForest,
    x_new: np.ndarray,
    max_depth: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-tree matrix of depth-pruned predictions.

    Column j of the matrix is tree j pruned to max_depth, so the first return
    is the prediction of the pruned-ensemble average.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2 or x_new.shape[1] != f.n_features:
        raise DataError(f"expected {f.n_features} columns, got shape {x_new.shape}")
    matrix = np.empty((x_new.shape[0], len(f.trees)))
    for j, ct in enumerate(f.trees):
        matrix[:, j] = ct.tree.prune_to_depth(max_depth).predict(x_new)
    return matrix.mean(axis=1), matrix
