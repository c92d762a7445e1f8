"""Evolutionary search for a small tree minimizing a penalized distillation loss.

A population of depth-bounded trees is improved by five variation operators
under deterministic crowding: each parent is varied once per iteration and
survives unless its child scores strictly better. The score is
N*ln(MSE) + alpha*4*(M+1)*ln(N) with M the number of leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import DataError
from .tree import DistillationTarget, RegressionTree, fit_cart

OPERATORS = ("split", "prune", "major_mutation", "minor_mutation", "crossover")
MSE_FLOOR = 1e-12
MAX_VARY_ATTEMPTS = 20


@dataclass(frozen=True)
class EvoParams:
    population_size: int = 200
    max_iterations: int = 10000
    min_iterations: int = 1000
    convergence_window: int = 100
    elite_fraction: float = 0.05
    alpha: float = 1.0
    max_depth: int = 4
    min_leaf: int = 25
    operator_probs: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    greedy_seed_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise DataError(f"population_size must be >= 2, got {self.population_size}")
        if self.max_iterations < 1 or self.min_iterations < 0:
            raise DataError("iteration counts must be positive")
        if self.convergence_window < 1:
            raise DataError(f"convergence_window must be >= 1, got {self.convergence_window}")
        if self.elite_fraction * self.population_size < 1.0:
            raise DataError("elite_fraction * population_size must be >= 1")
        if self.alpha < 0:
            raise DataError(f"alpha must be >= 0, got {self.alpha}")
        if self.max_depth < 0:
            raise DataError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise DataError(f"min_leaf must be >= 1, got {self.min_leaf}")
        probs = tuple(float(q) for q in self.operator_probs)
        if len(probs) != 5 or any(q < 0 for q in probs):
            raise DataError("operator_probs must be 5 non-negative values")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise DataError(f"operator_probs must sum to 1, got {sum(probs)}")
        if not 0.0 <= self.greedy_seed_fraction <= 1.0:
            raise DataError("greedy_seed_fraction must be in [0, 1]")
        object.__setattr__(self, "operator_probs", probs)


@dataclass
class EvoState:
    """Snapshot of a finished run, for diagnostics."""

    iterations_run: int
    converged: bool
    best_eval: float
    population_evals: np.ndarray
    elite_fingerprints: list[bytes]


def _evaluation(n: int, sse: float, n_leaves: int, alpha: float, log_n: float) -> float:
    mse = sse / n
    if mse < MSE_FLOOR:
        mse = MSE_FLOOR
    return n * math.log(mse) + alpha * 4.0 * (n_leaves + 1) * log_n


def evaluate_tree(tree: RegressionTree, target: DistillationTarget, alpha: float = 1.0) -> float:
    """N*ln(MSE) + alpha*4*(M+1)*ln(N), with MSE floored at 1e-12."""
    pred = tree.predict(target.x)
    if not np.all(np.isfinite(pred)):
        raise DataError("tree produced non-finite predictions")
    sse = float(np.sum((target.t - pred) ** 2))
    return _evaluation(target.n, sse, tree.n_leaves, alpha, math.log(target.n))


class _Ind:
    """One population member: structure arrays plus cached routing and score."""

    __slots__ = ("feature", "threshold", "left", "right", "assign", "eval",
                 "_depths", "_leaf_ids", "_internal_ids")

    def __init__(self, feature, threshold, left, right, assign, ev):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.assign = assign
        self.eval = ev
        self._depths = None
        self._leaf_ids = None
        self._internal_ids = None

    def leaf_ids(self) -> np.ndarray:
        if self._leaf_ids is None:
            self._leaf_ids = np.flatnonzero(self.feature < 0)
        return self._leaf_ids

    def internal_ids(self) -> np.ndarray:
        if self._internal_ids is None:
            self._internal_ids = np.flatnonzero(self.feature >= 0)
        return self._internal_ids

    def depths(self) -> np.ndarray:
        if self._depths is None:
            d = np.zeros(len(self.feature), dtype=np.int64)
            stack = [0]
            while stack:
                i = stack.pop()
                if self.feature[i] >= 0:
                    l, r = self.left[i], self.right[i]
                    d[l] = d[r] = d[i] + 1
                    stack.append(int(l))
                    stack.append(int(r))
            self._depths = d
        return self._depths


class _Search:
    """Immutable per-run context: target data, presorted columns, constraints."""

    def __init__(self, target: DistillationTarget, max_depth: int, min_leaf: int, alpha: float):
        self.x = np.ascontiguousarray(target.x)
        self.t = target.t
        self.n, self.p = target.n, target.p
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.alpha = alpha
        self.t_sq_sum = float(self.t @ self.t)
        self.log_n = math.log(self.n)
        self.order = [np.argsort(self.x[:, f], kind="stable") for f in range(self.p)]
        self.sorted_vals = [self.x[self.order[f], f] for f in range(self.p)]

    def candidates(self, mask: np.ndarray, f: int) -> np.ndarray:
        """Midpoints of consecutive distinct values of column f over masked rows."""
        vals = self.sorted_vals[f][mask[self.order[f]]]
        if len(vals) < 2:
            return np.empty(0)
        step = vals[1:] > vals[:-1]
        return 0.5 * (vals[:-1][step] + vals[1:][step])

    def finish(self, feature, threshold, left, right) -> _Ind | None:
        """Route, enforce the leaf minimum, and score; None if rejected."""
        assign = _kernels.route_rows(feature, threshold, left, right, self.x)
        c = len(feature)
        cnt = np.bincount(assign, minlength=c)
        leaves = feature < 0
        if np.min(cnt, where=leaves, initial=self.n) < self.min_leaf:
            return None
        sums = np.bincount(assign, weights=self.t, minlength=c)
        fit = np.sum(sums * sums / np.maximum(cnt, 1), where=leaves, initial=0.0)
        sse = self.t_sq_sum - float(fit)
        if sse < 0.0:
            sse = 0.0
        ev = _evaluation(self.n, sse, int(leaves.sum()), self.alpha, self.log_n)
        return _Ind(feature, threshold, left, right, assign, ev)


def _subtree_row_mask(ind: _Ind, node: int) -> np.ndarray:
    """Rows routed through `node`: those landing on a leaf of its subtree."""
    is_under = np.zeros(len(ind.feature), dtype=bool)
    stack = [node]
    while stack:
        i = stack.pop()
        if ind.feature[i] >= 0:
            stack.append(int(ind.left[i]))
            stack.append(int(ind.right[i]))
        else:
            is_under[i] = True
    return is_under[ind.assign]


def _compact_arrays(feature, threshold, left, right, max_depth=None, root=0):
    """Preorder renumbering reachable from root, truncating below max_depth."""
    nf, nt, nl, nr = [], [], [], []
    stack = [(int(root), 0, -1, False)]
    while stack:
        node, depth, parent, is_right = stack.pop()
        new_id = len(nf)
        if parent >= 0:
            (nr if is_right else nl)[parent] = new_id
        cut = max_depth is not None and depth >= max_depth
        if feature[node] >= 0 and not cut:
            nf.append(int(feature[node]))
            nt.append(float(threshold[node]))
            nl.append(-1)
            nr.append(-1)
            stack.append((int(right[node]), depth + 1, new_id, True))
            stack.append((int(left[node]), depth + 1, new_id, False))
        else:
            nf.append(-1)
            nt.append(np.nan)
            nl.append(-1)
            nr.append(-1)
    return (np.array(nf, dtype=np.int64), np.array(nt, dtype=np.float64),
            np.array(nl, dtype=np.int64), np.array(nr, dtype=np.int64))


def _grown_by_two(src: np.ndarray, fill) -> np.ndarray:
    out = np.empty(len(src) + 2, dtype=src.dtype)
    out[:-2] = src
    out[-2:] = fill
    return out


def _try_split(ind: _Ind, rng, ctx: _Search):
    leaves = ind.leaf_ids()
    leaf = int(leaves[rng.integers(len(leaves))])
    if ind.depths()[leaf] >= ctx.max_depth:
        return None
    f = int(rng.integers(ctx.p))
    cands = ctx.candidates(ind.assign == leaf, f)
    if len(cands) == 0:
        return None
    thr = float(cands[rng.integers(len(cands))])
    c = len(ind.feature)
    feature = _grown_by_two(ind.feature, -1)
    threshold = _grown_by_two(ind.threshold, np.nan)
    left = _grown_by_two(ind.left, -1)
    right = _grown_by_two(ind.right, -1)
    feature[leaf] = f
    threshold[leaf] = thr
    left[leaf] = c
    right[leaf] = c + 1
    return feature, threshold, left, right


def _try_prune(ind: _Ind, rng):
    pairs = np.flatnonzero((ind.feature >= 0)
                           & (ind.feature[ind.left] < 0)
                           & (ind.feature[ind.right] < 0))
    node = int(pairs[rng.integers(len(pairs))])
    feature = ind.feature.copy()
    threshold = ind.threshold.copy()
    feature[node] = -1
    threshold[node] = np.nan
    return _compact_arrays(feature, threshold, ind.left, ind.right)


def _try_major(ind: _Ind, rng, ctx: _Search):
    internal = ind.internal_ids()
    node = int(internal[rng.integers(len(internal))])
    f = int(ind.feature[node])
    if rng.random() < 0.5:
        f = int(rng.integers(ctx.p))
    cands = ctx.candidates(_subtree_row_mask(ind, node), f)
    if len(cands) == 0:
        return None
    thr = float(cands[rng.integers(len(cands))])
    feature = ind.feature.copy()
    threshold = ind.threshold.copy()
    feature[node] = f
    threshold[node] = thr
    return feature, threshold, ind.left.copy(), ind.right.copy()


def _try_minor(ind: _Ind, rng, ctx: _Search):
    internal = ind.internal_ids()
    node = int(internal[rng.integers(len(internal))])
    thr = float(ind.threshold[node])
    cands = ctx.candidates(_subtree_row_mask(ind, node), int(ind.feature[node]))
    i = int(np.searchsorted(cands, thr))
    below = i - 1
    above = i + 1 if i < len(cands) and cands[i] == thr else i
    has_below = below >= 0
    has_above = above < len(cands)
    if not (has_below or has_above):
        return None
    go_down = rng.random() < 0.5
    if go_down and not has_below:
        go_down = False
    elif not go_down and not has_above:
        go_down = True
    new_thr = float(cands[below] if go_down else cands[above])
    threshold = ind.threshold.copy()
    threshold[node] = new_thr
    return ind.feature.copy(), threshold, ind.left.copy(), ind.right.copy()


def _try_crossover(ind: _Ind, mate: _Ind, rng, ctx: _Search):
    a = int(rng.integers(len(ind.feature)))
    b = int(rng.integers(len(mate.feature)))
    if a == 0:
        return _compact_arrays(mate.feature, mate.threshold, mate.left, mate.right,
                               max_depth=ctx.max_depth, root=b)
    offset = len(ind.feature)
    feature = np.concatenate((ind.feature, mate.feature + 0))
    threshold = np.concatenate((ind.threshold, mate.threshold))
    left = np.concatenate((ind.left, np.where(mate.left >= 0, mate.left + offset, -1)))
    right = np.concatenate((ind.right, np.where(mate.right >= 0, mate.right + offset, -1)))
    hits = np.flatnonzero(ind.left == a)
    if len(hits):
        left[int(hits[0])] = offset + b
    else:
        right[int(np.flatnonzero(ind.right == a)[0])] = offset + b
    return _compact_arrays(feature, threshold, left, right, max_depth=ctx.max_depth)


def _make_child(ind: _Ind, op: int, rng, ctx: _Search, mate: _Ind) -> _Ind | None:
    """One variation attempt loop; None means every attempt was rejected."""
    single_leaf = len(ind.feature) == 1
    for _ in range(MAX_VARY_ATTEMPTS):
        use_op = op
        if single_leaf and op in (1, 2, 3):
            use_op = 0  # structure-changing ops need an internal node
        if use_op == 0:
            built = _try_split(ind, rng, ctx)
        elif use_op == 1:
            built = _try_prune(ind, rng)
        elif use_op == 2:
            built = _try_major(ind, rng, ctx)
        elif use_op == 3:
            built = _try_minor(ind, rng, ctx)
        else:
            built = _try_crossover(ind, mate, rng, ctx)
        if built is None:
            continue
        child = ctx.finish(*built)
        if child is not None:
            return child
    return None


def _ind_from_tree(tree: RegressionTree, ctx: _Search) -> _Ind:
    t = tree.compact()
    out = ctx.finish(t.feature, t.threshold, t.left, t.right)
    if out is None:
        raise DataError("seed tree violates the leaf-minimum constraint")
    return out


def _random_individual(ctx: _Search, rng) -> _Ind:
    """A random tree of depth at most 2 respecting the leaf minimum."""
    want_depth = int(rng.integers(0, min(2, ctx.max_depth) + 1))
    feature, threshold, left, right = [], [], [], []

    def grow(mask: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        if depth >= want_depth:
            return node
        for _ in range(5):
            f = int(rng.integers(ctx.p))
            cands = ctx.candidates(mask, f)
            if len(cands) == 0:
                continue
            thr = float(cands[rng.integers(len(cands))])
            go_left = mask & (ctx.x[:, f] <= thr)
            n_left = int(go_left.sum())
            if n_left < ctx.min_leaf or int(mask.sum()) - n_left < ctx.min_leaf:
                continue
            feature[node] = f
            threshold[node] = thr
            left[node] = grow(go_left, depth + 1)
            right[node] = grow(mask & ~go_left, depth + 1)
            break
        return node

    grow(np.ones(ctx.n, dtype=bool), 0)
    out = ctx.finish(np.array(feature, dtype=np.int64), np.array(threshold),
                     np.array(left, dtype=np.int64), np.array(right, dtype=np.int64))
    assert out is not None  # growth only accepted constraint-satisfying splits
    return out


def _to_tree(ind: _Ind, ctx: _Search) -> RegressionTree:
    """Materialize with per-node target means and row counts, everywhere."""
    c = len(ind.feature)
    cnt = np.bincount(ind.assign, minlength=c).astype(np.int64)
    sums = np.bincount(ind.assign, weights=ctx.t, minlength=c)
    tree = RegressionTree(
        n_features=ctx.p, feature=ind.feature.copy(), threshold=ind.threshold.copy(),
        left=ind.left.copy(), right=ind.right.copy(),
        value=np.zeros(c), n_rows=cnt,
    )
    parents = tree.parents()
    for i in np.argsort(-tree.node_depths(), kind="stable"):
        par = parents[i]
        if par >= 0:
            sums[par] += sums[i]
            tree.n_rows[par] += tree.n_rows[i]
    np.divide(sums, tree.n_rows, out=tree.value, where=tree.n_rows > 0)
    return tree.compact()


def vary(
    tree: RegressionTree,
    op: str,
    rng: np.random.Generator,
    target: DistillationTarget,
    max_depth: int = 4,
    min_leaf: int = 1,
    mate: RegressionTree | None = None,
) -> RegressionTree:
    """Apply one named operator; returns the parent copy if every attempt fails.

    Inapplicable operators (pruning a lone leaf, perturbing a tree with no
    internal node) fall back to a split. Leaf values of the result are
    recomputed as target means.
    """
    if op not in OPERATORS:
        raise DataError(f"unknown operator '{op}'")
    if op == "crossover" and mate is None:
        raise DataError("crossover requires a mate tree")
    ctx = _Search(target, max_depth, min_leaf, alpha=1.0)
    ind = _ind_from_tree(tree, ctx)
    mate_ind = _ind_from_tree(mate, ctx) if mate is not None else ind
    child = _make_child(ind, OPERATORS.index(op), rng, ctx, mate_ind)
    return _to_tree(child if child is not None else ind, ctx)


def fit_evtree(
    target: DistillationTarget,
    params: EvoParams | None = None,
    progress_path=None,
    return_state: bool = False,
):
    """Run the evolutionary search and return the best tree ever observed.

    Seeding: one exact greedy tree, further greedy copies perturbed by one
    minor mutation, and random depth-<=2 trees for the rest. Convergence is
    declared when the sorted elite evaluations (rounded to 1e-9) hold still
    for convergence_window iterations, never before min_iterations.
    """
    params = params or EvoParams()
    if target.n < 2 * params.min_leaf:
        raise DataError(f"target with {target.n} rows cannot satisfy min_leaf={params.min_leaf}")
    ctx = _Search(target, params.max_depth, params.min_leaf, params.alpha)
    pop_size = params.population_size
    master = np.random.default_rng(np.random.SeedSequence(entropy=params.seed, spawn_key=(3,)))

    n_greedy = 0
    if params.greedy_seed_fraction > 0:
        n_greedy = min(pop_size, max(1, round(params.greedy_seed_fraction * pop_size)))
    population: list[_Ind] = []
    if n_greedy:
        greedy = _ind_from_tree(
            fit_cart(target, max_depth=params.max_depth, min_leaf=params.min_leaf), ctx)
        population.append(greedy)
        for _ in range(n_greedy - 1):
            child = _make_child(greedy, 3, master, ctx, greedy)
            population.append(child if child is not None else greedy)
    while len(population) < pop_size:
        population.append(_random_individual(ctx, master))

    evals = np.array([ind.eval for ind in population])
    best_idx = int(np.argmin(evals))
    best = population[best_idx]
    best_eval = float(evals[best_idx])

    elite_k = max(1, int(params.elite_fraction * pop_size))
    cum_probs = np.cumsum(params.operator_probs)
    streak = 0
    prev_fp = None
    fingerprints: list[bytes] = []
    iterations_run = 0
    converged = False
    log = open(progress_path, "w") if progress_path is not None else None
    if log is not None:
        log.write("iteration,best_eval,elite_mean\n")

    try:
        for it in range(params.max_iterations):
            # one serial stream, consumed in iteration-major, index-minor order
            for j in range(pop_size):
                op = int(np.searchsorted(cum_probs, master.random(), side="right"))
                mate = population[int(master.integers(pop_size))] if op == 4 else population[j]
                child = _make_child(population[j], op, master, ctx, mate)
                if child is not None and child.eval < evals[j]:
                    population[j] = child
                    evals[j] = child.eval
                    if child.eval < best_eval:
                        best = child
                        best_eval = child.eval
            iterations_run = it + 1
            assert len(population) == pop_size
            assert best_eval <= evals.min() + 1e-12

            elite = np.sort(np.partition(evals, elite_k - 1)[:elite_k]).round(9)
            fp = elite.tobytes()
            fingerprints.append(fp)
            streak = streak + 1 if fp == prev_fp else 0
            prev_fp = fp
            if log is not None:
                log.write(f"{iterations_run},{best_eval!r},{float(np.mean(elite))!r}\n")
            if iterations_run >= params.min_iterations and streak >= params.convergence_window:
                converged = True
                break
    finally:
        if log is not None:
            log.close()

    tree = _to_tree(best, ctx)
    if return_state:
        keep = params.convergence_window
        state = EvoState(
            iterations_run=iterations_run, converged=converged, best_eval=best_eval,
            population_evals=evals.copy(), elite_fingerprints=fingerprints[-keep:],
        )
        return tree, state
    return tree
