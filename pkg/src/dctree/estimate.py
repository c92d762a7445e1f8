"""Doubly robust per-node effect estimation for a fixed tree structure.

Any depth-limited tree becomes a distilled causal tree here: every node gets
an AIPW effect estimate from held-out estimation rows, and standard errors
come from resampling within each node with the structure held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataError, Dataset
from .forest import clip_propensity
from .tree import RegressionTree

DEFAULT_BOOTSTRAP_B = 500


@dataclass(frozen=True)
class NuisanceValues:
    """Propensity and arm-outcome predictions aligned to a set of rows."""

    e: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray

    def __post_init__(self):
        e = clip_propensity(np.asarray(self.e, dtype=np.float64))
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        mu1 = np.asarray(self.mu1, dtype=np.float64)
        n = e.shape[0]
        if mu0.shape != (n,) or mu1.shape != (n,):
            raise DataError("nuisance vectors have mismatched lengths")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(mu0)) and np.all(np.isfinite(mu1))):
            raise DataError("nuisance vectors contain non-finite values")
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)

    @property
    def n(self) -> int:
        return self.e.shape[0]


def aipw_scores(y: np.ndarray, w: np.ndarray, nv: NuisanceValues) -> np.ndarray:
    """Per-row augmented inverse probability weighting scores.

    psi_i = (W_i - e_i) / (e_i (1 - e_i)) * (Y_i - mu_{W_i}(X_i)) + mu1_i - mu0_i
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if y.shape != (nv.n,) or w.shape != (nv.n,):
        raise DataError("y/w length does not match nuisance values")
    mu_w = np.where(w == 1.0, nv.mu1, nv.mu0)
    return (w - nv.e) / (nv.e * (1.0 - nv.e)) * (y - mu_w) + nv.mu1 - nv.mu0


@dataclass(frozen=True)
class LeafEstimate:
    tau_hat: float
    se: float
    n_node: int
    n_treated: int
    n_control: int
    available: bool
    se_available: bool

    @property
    def significant_95(self) -> bool:
        if not (self.available and self.se_available):
            return False
        return abs(self.tau_hat) > 1.96 * self.se


@dataclass
class EstimatedTree:
    """A tree structure plus one LeafEstimate per node (internal nodes too)."""

    tree: RegressionTree
    estimates: list[LeafEstimate]
    feature_names: tuple[str, ...]
    est_n: int

    def __post_init__(self):
        if len(self.estimates) != self.tree.n_nodes:
            raise DataError("one estimate required per tree node")
        if len(self.feature_names) != self.tree.n_features:
            raise DataError("feature_names length does not match the tree")


def _node_memberships(tree: RegressionTree, assign: np.ndarray) -> list[np.ndarray]:
    """Row positions reaching each node, from a leaf assignment vector."""
    members: list[list[int]] = [[] for _ in range(tree.n_nodes)]
    for pos, leaf in enumerate(assign):
        members[leaf].append(pos)
    parents = tree.parents()
    depths = tree.node_depths()
    for i in np.argsort(-depths, kind="stable"):
        if parents[i] >= 0:
            members[parents[i]].extend(members[i])
    return [np.sort(np.array(m, dtype=np.int64)) for m in members]


def _check_est_inputs(tree: RegressionTree, est: Dataset, nv: NuisanceValues):
    if est.n == 0:
        raise DataError("estimation sample is empty")
    if est.p != tree.n_features:
        raise DataError(f"estimation data has {est.p} features, tree expects {tree.n_features}")
    if nv.n != est.n:
        raise DataError("nuisance values do not align with the estimation sample")


def estimate_leaves(tree: RegressionTree, est: Dataset, nuisances: NuisanceValues) -> EstimatedTree:
    """AIPW effect estimate for every node, from estimation rows only.

    A node's tau_hat is the mean AIPW score over its rows; sums aggregate
    upward so a parent's estimate is exactly the row-count-weighted mean of
    its children's. Nodes missing a treatment arm are flagged unavailable.
    """
    _check_est_inputs(tree, est, nuisances)
    psi = aipw_scores(est.y, est.w, nuisances)
    assign = tree.route(est.x)
    c = tree.n_nodes
    psi_sum = np.bincount(assign, weights=psi, minlength=c)
    count = np.bincount(assign, minlength=c)
    treated = np.bincount(assign, weights=est.w, minlength=c)

    parents = tree.parents()
    depths = tree.node_depths()
    for i in np.argsort(-depths, kind="stable"):
        par = parents[i]
        if par >= 0:
            psi_sum[par] += psi_sum[i]
            count[par] += count[i]
            treated[par] += treated[i]

    estimates = []
    for i in range(c):
        n_node = int(count[i])
        n_t = int(treated[i])
        n_c = n_node - n_t
        available = n_t >= 1 and n_c >= 1
        tau = float(psi_sum[i] / n_node) if available else float("nan")
        estimates.append(LeafEstimate(
            tau_hat=tau, se=float("nan"), n_node=n_node, n_treated=n_t,
            n_control=n_c, available=available, se_available=False,
        ))
    return EstimatedTree(tree=tree.copy(), estimates=estimates,
                         feature_names=est.feature_names, est_n=est.n)


def bootstrap_se(
    tree: RegressionTree,
    est: Dataset,
    nuisances: NuisanceValues,
    b: int = DEFAULT_BOOTSTRAP_B,
    seed: int = 0,
) -> EstimatedTree:
    """Per-node bootstrap standard errors with the tree structure held fixed.

    Each node's estimation rows are resampled with replacement b times; the
    SE is the standard deviation of the resampled AIPW means. Nodes with
    fewer than 2 rows keep se_available=False.
    """
    if b < 2:
        raise DataError(f"bootstrap replicates must be >= 2, got {b}")
    et = estimate_leaves(tree, est, nuisances)
    psi = aipw_scores(est.y, est.w, nuisances)
    members = _node_memberships(et.tree, et.tree.route(est.x))

    filled = []
    for i, base in enumerate(et.estimates):
        rows = members[i]
        if len(rows) < 2 or not base.available:
            filled.append(base)
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        draws = rng.integers(0, len(rows), size=(b, len(rows)))
        means = psi[rows][draws].mean(axis=1)
        se = float(means.std(ddof=1))
        filled.append(LeafEstimate(
            tau_hat=base.tau_hat, se=se, n_node=base.n_node,
            n_treated=base.n_treated, n_control=base.n_control,
            available=base.available, se_available=True,
        ))
    return EstimatedTree(tree=et.tree, estimates=filled,
                         feature_names=et.feature_names, est_n=et.est_n)


def predict_dct(
    et: EstimatedTree,
    x_new: np.ndarray,
    on_unavailable: str = "error",
) -> tuple[np.ndarray, np.ndarray]:
    """Route rows and return per-row (tau_hat, se) from the landing node.

    on_unavailable='ancestor' substitutes the nearest ancestor with an
    available estimate instead of raising.
    """
    if on_unavailable not in ("error", "ancestor"):
        raise DataError(f"unknown on_unavailable mode '{on_unavailable}'")
    leaf = et.tree.route(x_new)
    parents = et.tree.parents()
    node = leaf.copy()
    for pos in range(len(node)):
        i = int(node[pos])
        while not et.estimates[i].available:
            if on_unavailable == "error":
                raise DataError(f"row {pos} routed to node {i} with no available estimate")
            i = int(parents[i])
            if i < 0:
                raise DataError(f"row {pos}: no ancestor has an available estimate")
        node[pos] = i
    tau = np.array([et.estimates[i].tau_hat for i in node])
    se = np.array([et.estimates[i].se for i in node])
    return tau, se
