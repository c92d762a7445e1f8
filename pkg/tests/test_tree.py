import numpy as np
import pytest

from dctree import _kernels
from dctree.dataset import DataError
from dctree.tree import (
    DistillationTarget,
    RegressionTree,
    candidate_thresholds,
    fit_cart,
    leaf_tree,
    predict_tree,
)


def four_point_target():
    return DistillationTarget(x=np.array([[0.0], [1.0], [2.0], [3.0]]),
                              t=np.array([0.0, 0.0, 10.0, 10.0]))


def random_target(n=120, p=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    t = x[:, 0] + 0.5 * rng.normal(size=n)
    return DistillationTarget(x=x, t=t)


class TestFitCart:
    def test_four_point_oracle(self):
        # exhaustive check over the 3 candidate midpoints picks 1.5
        tree = fit_cart(four_point_target(), max_depth=1, min_leaf=1)
        assert tree.n_nodes == 3
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 1.5
        leaves = sorted(tree.value[tree.leaf_ids()])
        assert leaves == [0.0, 10.0]
        pred = tree.predict(four_point_target().x)
        assert np.array_equal(pred, [0.0, 0.0, 10.0, 10.0])

    def test_constant_target_single_leaf(self):
        tgt = DistillationTarget(x=np.arange(10.0)[:, None], t=np.full(10, 3.25))
        tree = fit_cart(tgt, max_depth=4, min_leaf=1)
        assert tree.n_nodes == 1
        assert tree.value[0] == 3.25

    def test_depth_zero_single_leaf(self):
        tgt = four_point_target()
        tree = fit_cart(tgt, max_depth=0, min_leaf=1)
        assert tree.n_nodes == 1
        assert tree.value[0] == 5.0

    def test_too_small_target(self):
        with pytest.raises(DataError, match="rows"):
            fit_cart(four_point_target(), max_depth=2, min_leaf=3)

    def test_negative_depth(self):
        with pytest.raises(DataError, match="max_depth"):
            fit_cart(four_point_target(), max_depth=-1, min_leaf=1)

    def test_min_leaf_respected(self):
        tgt = random_target(n=64, seed=4)
        tree = fit_cart(tgt, max_depth=6, min_leaf=10)
        leaf_counts = tree.n_rows[tree.leaf_ids()]
        assert leaf_counts.min() >= 10

    def test_mse_monotone_in_depth(self):
        for seed in range(5):
            tgt = random_target(n=150, seed=seed)
            last = np.inf
            for depth in range(7):
                tree = fit_cart(tgt, max_depth=depth, min_leaf=5)
                mse = float(np.mean((tgt.t - tree.predict(tgt.x)) ** 2))
                assert mse <= last + 1e-12
                last = mse

    def test_step_function_recovered_exactly(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(200, 2))
        t = np.where(x[:, 1] > 0.3, 2.0, -1.0)
        tree = fit_cart(DistillationTarget(x=x, t=t), max_depth=3, min_leaf=5)
        assert np.array_equal(tree.predict(x), t)

    def test_tie_break_prefers_lowest_feature(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=40)
        t = np.where(a > 0, 1.0, 0.0)
        x = np.column_stack([a, rng.normal(size=40), a])
        tree = fit_cart(DistillationTarget(x=x, t=t), max_depth=1, min_leaf=1)
        assert tree.feature[0] == 0

    def test_column_permutation_commutes(self):
        tgt = random_target(n=100, p=4, seed=9)
        perm = np.array([2, 0, 3, 1])
        inverse = np.argsort(perm)
        tree_a = fit_cart(tgt, max_depth=3, min_leaf=5)
        tree_b = fit_cart(DistillationTarget(x=tgt.x[:, perm], t=tgt.t),
                          max_depth=3, min_leaf=5)
        remapped = np.where(tree_b.feature >= 0, perm[tree_b.feature], -1)
        assert np.array_equal(remapped, tree_a.feature)
        assert np.array_equal(tree_b.left, tree_a.left)
        internal = tree_a.feature >= 0
        assert np.array_equal(tree_b.threshold[internal], tree_a.threshold[internal])
        assert np.array_equal(tree_b.value, tree_a.value)


class TestPredict:
    def test_threshold_value_routes_left(self):
        tree = fit_cart(four_point_target(), max_depth=1, min_leaf=1)
        assert tree.predict(np.array([[1.5]]))[0] == 0.0
        assert tree.predict(np.array([[1.5000001]]))[0] == 10.0

    def test_single_leaf_constant(self):
        tree = leaf_tree(n_features=2, value=7.0, n_rows=5)
        assert np.array_equal(tree.predict(np.zeros((4, 2))), np.full(4, 7.0))

    def test_column_mismatch(self):
        tree = leaf_tree(n_features=2, value=0.0, n_rows=1)
        with pytest.raises(DataError, match="columns"):
            predict_tree(tree, np.zeros((3, 5)))

    def test_non_finite_input(self):
        tree = leaf_tree(n_features=1, value=0.0, n_rows=1)
        with pytest.raises(DataError, match="non-finite"):
            tree.predict(np.array([[np.nan]]))

    def test_empty_input(self):
        tree = leaf_tree(n_features=3, value=1.0, n_rows=1)
        assert tree.predict(np.zeros((0, 3))).shape == (0,)


class TestStructure:
    def test_prune_to_depth(self):
        tgt = random_target(n=400, seed=2)
        deep = fit_cart(tgt, max_depth=6, min_leaf=2)
        assert deep.depth() > 4
        pruned = deep.prune_to_depth(4)
        assert pruned.depth() <= 4
        shallow = fit_cart(tgt, max_depth=2, min_leaf=5)
        same = shallow.prune_to_depth(4)
        assert same.to_dict() == shallow.compact().to_dict()

    def test_prune_to_zero(self):
        tree = fit_cart(four_point_target(), max_depth=1, min_leaf=1)
        stump = tree.prune_to_depth(0)
        assert stump.n_nodes == 1
        assert stump.value[0] == 5.0

    def test_dict_round_trip(self):
        tree = fit_cart(random_target(seed=10), max_depth=4, min_leaf=5)
        clone = RegressionTree.from_dict(tree.to_dict())
        assert clone.to_dict() == tree.to_dict()
        x = random_target(seed=11).x
        assert np.array_equal(clone.predict(x), tree.predict(x))

    def test_validate_rejects_cycles(self):
        bad = RegressionTree(
            n_features=1,
            feature=np.array([0, -1]),
            threshold=np.array([0.5, np.nan]),
            left=np.array([1, -1]),
            right=np.array([0, -1]),
            value=np.zeros(2),
            n_rows=np.ones(2, dtype=np.int64),
        )
        with pytest.raises(DataError):
            bad.validate()

    def test_candidate_thresholds(self):
        c = candidate_thresholds(np.array([3.0, 1.0, 1.0, 2.0]))
        assert np.array_equal(c, [1.5, 2.5])
        assert candidate_thresholds(np.array([2.0, 2.0])).size == 0


class TestKernels:
    def test_numpy_and_numba_agree(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            tgt = random_target(n=80, p=4, seed=seed)
            tree = fit_cart(tgt, max_depth=4, min_leaf=3)
            x = rng.normal(size=(60, 4))
            via_numpy = _kernels._route_rows_numpy(
                tree.feature, tree.threshold, tree.left, tree.right, x)
            assert np.array_equal(tree.route(x), via_numpy)
