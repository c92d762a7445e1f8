import numpy as np
import pytest

from dctree.dataset import (
    ColumnMapping,
    DataError,
    Dataset,
    csv_mapping_for,
    inject_noise,
    load_csv,
    split_honest,
    write_csv,
)


def make_dataset(n=200, p=4, seed=0, with_tau=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    w = (rng.random(n) < 0.5).astype(float)
    y = x[:, 0] + rng.normal(size=n)
    tau = x[:, 1] if with_tau else None
    names = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(x=x, y=y, w=w, feature_names=names, tau_true=tau)


class TestDatasetInvariants:
    def test_basic_construction(self):
        d = make_dataset()
        assert d.n == 200 and d.p == 4
        assert d.n_treated + d.n_control == d.n

    def test_arrays_are_readonly(self):
        d = make_dataset()
        with pytest.raises(ValueError):
            d.x[0, 0] = 1.0
        with pytest.raises(ValueError):
            d.y[0] = 1.0

    def test_w_outside_01_rejected(self):
        with pytest.raises(DataError, match="0 and 1"):
            Dataset(x=np.zeros((3, 1)), y=np.zeros(3), w=np.array([0.0, 1.0, 2.0]),
                    feature_names=("a",))

    def test_missing_values_rejected(self):
        x = np.zeros((3, 1))
        x[1, 0] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            Dataset(x=x, y=np.zeros(3), w=np.zeros(3), feature_names=("a",))

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            Dataset(x=np.zeros((3, 1)), y=np.zeros(4), w=np.zeros(3), feature_names=("a",))

    def test_duplicate_feature_names_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            Dataset(x=np.zeros((3, 2)), y=np.zeros(3), w=np.zeros(3),
                    feature_names=("a", "a"))

    def test_both_arms_check(self):
        d = Dataset(x=np.zeros((3, 1)), y=np.zeros(3), w=np.ones(3), feature_names=("a",))
        with pytest.raises(DataError, match="arms"):
            d.require_both_arms()

    def test_subset_keeps_alignment(self):
        d = make_dataset()
        rows = np.array([3, 10, 50])
        s = d.subset(rows)
        assert np.array_equal(s.x, d.x[rows])
        assert np.array_equal(s.tau_true, d.tau_true[rows])


class TestLoadCsv:
    def test_minimal_four_rows(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("y,w,x1\n1.0,0,0.5\n2.0,1,1.5\n3.0,0,2.5\n4.0,1,3.5\n")
        d = load_csv(str(f), ColumnMapping(outcome="y", treatment="w"))
        assert d.n == 4 and d.p == 1
        assert d.feature_names == ("x1",)
        assert np.array_equal(d.w, [0, 1, 0, 1])

    def test_treatment_value_2_rejected(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("y,w,x1\n1.0,0,0.5\n2.0,2,1.5\n")
        with pytest.raises(DataError, match="'w'"):
            load_csv(str(f), ColumnMapping(outcome="y", treatment="w"))

    def test_one_hot_rows_sum_to_one(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(
            "y,w,party,x1\n"
            "1.0,0,red,0.1\n2.0,1,green,0.2\n3.0,0,blue,0.3\n"
            "4.0,1,red,0.4\n5.0,0,green,0.5\n6.0,1,blue,0.6\n"
        )
        d = load_csv(str(f), ColumnMapping(outcome="y", treatment="w"))
        dummy_cols = [j for j, s in enumerate(d.feature_names) if s.startswith("party=")]
        assert len(dummy_cols) == 3
        assert d.feature_names[:3] == ("party=blue", "party=green", "party=red")
        sums = d.x[:, dummy_cols].sum(axis=1)
        assert np.array_equal(sums, np.ones(6))

    def test_missing_cell_names_row_and_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("y,w,x1\n1.0,0,0.5\n2.0,1,\n")
        with pytest.raises(DataError, match=r"row 3, column 'x1'"):
            load_csv(str(f), ColumnMapping(outcome="y", treatment="w"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(str(tmp_path / "nope.csv"), ColumnMapping(outcome="y", treatment="w"))

    def test_missing_mapped_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("y,w,x1\n1.0,0,0.5\n")
        with pytest.raises(DataError, match="'treat'"):
            load_csv(str(f), ColumnMapping(outcome="y", treatment="treat"))

    def test_explicit_covariates_keep_mapping_order(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("y,w,b,a\n1.0,0,1.0,2.0\n2.0,1,3.0,4.0\n")
        d = load_csv(str(f), ColumnMapping(outcome="y", treatment="w", covariates=("b", "a")))
        assert d.feature_names == ("b", "a")
        d2 = load_csv(str(f), ColumnMapping(outcome="y", treatment="w"))
        assert d2.feature_names == ("a", "b")

    def test_round_trip_is_identity(self, tmp_path):
        d = make_dataset(n=57, p=3, seed=11)
        path = str(tmp_path / "rt.csv")
        write_csv(d, path)
        d2 = load_csv(path, csv_mapping_for(d))
        assert d2.feature_names == d.feature_names
        assert np.array_equal(d2.x, d.x)
        assert np.array_equal(d2.y, d.y)
        assert np.array_equal(d2.w, d.w)
        assert np.array_equal(d2.tau_true, d.tau_true)


class TestSplitHonest:
    def test_half_half_partition(self):
        d = make_dataset(n=100)
        s = split_honest(d, (0.5, 0.5, 0.0), seed=7)
        assert len(s.fit_indices) == 50 and len(s.est_indices) == 50
        assert len(s.test_indices) == 0
        combined = np.sort(np.concatenate([s.fit_indices, s.est_indices]))
        assert np.array_equal(combined, np.arange(100))

    def test_same_seed_identical(self):
        d = make_dataset(n=100)
        s1 = split_honest(d, (0.5, 0.5, 0.0), seed=7)
        s2 = split_honest(d, (0.5, 0.5, 0.0), seed=7)
        assert np.array_equal(s1.fit_indices, s2.fit_indices)
        assert np.array_equal(s1.est_indices, s2.est_indices)

    def test_quarter_quarter_half_sizes(self):
        d = make_dataset(n=100)
        s = split_honest(d, (0.25, 0.25, 0.5), seed=3, min_size=25)
        assert (len(s.fit_indices), len(s.est_indices), len(s.test_indices)) == (25, 25, 50)

    def test_minimum_size_enforced(self):
        d = make_dataset(n=100)
        with pytest.raises(DataError, match="minimum"):
            split_honest(d, (0.25, 0.25, 0.5), seed=3)

    def test_bad_fractions(self):
        d = make_dataset(n=200)
        with pytest.raises(DataError):
            split_honest(d, (0.5, 0.4, 0.0), seed=1)
        with pytest.raises(DataError):
            split_honest(d, (0.7, -0.1, 0.4), seed=1)

    def test_partition_property_many_seeds(self):
        # no index lost or duplicated, for a spread of sizes and seeds
        rng = np.random.default_rng(123)
        for trial in range(1000):
            n = int(rng.integers(100, 400))
            f_test = float(rng.uniform(0.0, 0.4))
            f_fit = float(rng.uniform(0.25, 0.5))
            fractions = (f_fit, 1.0 - f_fit - f_test, f_test)
            d = Dataset(x=np.zeros((n, 2)), y=np.zeros(n), w=np.zeros(n),
                        feature_names=("a", "b"))
            s = split_honest(d, fractions, seed=trial, min_size=10)
            allidx = np.concatenate([s.fit_indices, s.est_indices, s.test_indices])
            assert len(allidx) == n
            assert len(np.unique(allidx)) == n


class TestInjectNoise:
    def test_shapes_names_and_correlation(self):
        d = make_dataset(n=2000, p=10, seed=5)
        d2 = inject_noise(d, n_noise=20, n_corr=10, rho=0.9, seed=42)
        assert d2.p == 40
        assert d2.feature_names[10] == "noise_0"
        corr_cols = [s for s in d2.feature_names if s.startswith("corr_")]
        assert len(corr_cols) == 10
        for k, name in enumerate(corr_cols):
            src = name.split("_of_")[1]
            j = d.feature_names.index(src)
            col = d2.x[:, 10 + 20 + k]
            r = np.corrcoef(col, d.x[:, j])[0, 1]
            assert 0.8 <= r <= 0.97, f"{name}: corr {r}"

    def test_rho_half_correlation(self):
        d = make_dataset(n=2000, p=5, seed=6)
        d2 = inject_noise(d, n_noise=0, n_corr=8, rho=0.5, seed=9)
        for k, name in enumerate(s for s in d2.feature_names if s.startswith("corr_")):
            src = name.split("_of_")[1]
            j = d.feature_names.index(src)
            r = np.corrcoef(d2.x[:, d.p + k], d.x[:, j])[0, 1]
            assert 0.35 <= r <= 0.65

    def test_rho_out_of_range(self):
        d = make_dataset()
        with pytest.raises(DataError, match="rho"):
            inject_noise(d, n_noise=1, n_corr=1, rho=1.2, seed=0)

    def test_noop_rejected(self):
        d = make_dataset()
        with pytest.raises(DataError, match="no-op"):
            inject_noise(d, n_noise=0, n_corr=0, rho=0.9, seed=0)

    def test_corr_limit(self):
        d = make_dataset(p=2)
        with pytest.raises(DataError, match="n_corr"):
            inject_noise(d, n_noise=0, n_corr=11, rho=0.9, seed=0)

    def test_original_columns_untouched(self):
        d = make_dataset(n=300, p=6, seed=7)
        d2 = inject_noise(d, n_noise=3, n_corr=2, rho=0.9, seed=1)
        assert np.array_equal(d2.x[:, :6], d.x)
        assert np.array_equal(d2.y, d.y)
        assert np.array_equal(d2.w, d.w)
        assert np.array_equal(d2.tau_true, d.tau_true)
        assert d2.feature_names[:6] == d.feature_names

    def test_deterministic(self):
        d = make_dataset(n=100, p=3)
        a = inject_noise(d, n_noise=4, n_corr=2, rho=0.7, seed=3)
        b = inject_noise(d, n_noise=4, n_corr=2, rho=0.7, seed=3)
        assert np.array_equal(a.x, b.x)
        assert a.feature_names == b.feature_names
