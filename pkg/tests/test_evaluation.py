import math

import numpy as np
import pytest

from treeseg.data import Dataset, SplitPair, train_test_split
from treeseg.evaluation import (AblationReport, SweepReport, ablation_outliers,
                                compare_external, kept_training_set,
                                model_generalization_sweep, rmse,
                                segment_summary, tree_generalization_sweep)
from treeseg.pipeline import (FitConfig, OutlierConfig, fit_segmented,
                              predict_batch)


def make_split(rng, n=300, f=0.7):
    X = rng.uniform(-2, 2, size=(n, 2))
    y = np.where(X[:, 0] <= 0, 2.0 + X[:, 1], -5.0 - 0.5 * X[:, 1])
    y = y + rng.normal(size=n) * 0.1
    data = Dataset(X, y, ("f0", "f1"))
    return train_test_split(data, f, seed=13)


class TestRMSE:
    def test_examples(self):
        a = np.array([1.0, 2.0, 3.0])
        assert rmse(a, a) == 0.0
        assert rmse(a + 1.0, a) == pytest.approx(1.0)
        assert rmse(np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(math.sqrt(12.5))

    def test_symmetry_and_nonnegative(self, rng):
        p = rng.normal(size=40)
        a = rng.normal(size=40)
        assert rmse(p, a) == rmse(a, p) >= 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            rmse(np.array([]), np.array([]))


class TestTreeSweep:
    def test_single_leaf_closed_form(self, rng):
        split = make_split(rng)
        n = split.train.n_rows
        report = tree_generalization_sweep(split, [n])
        row = report.rows[0]
        assert row.n_leaves == 1
        assert row.train_rmse == pytest.approx(float(split.train.response.std()), rel=1e-12)
        mean = split.train.response.mean()
        expect_test = float(np.sqrt(np.mean((split.test.response - mean) ** 2)))
        assert row.test_rmse == pytest.approx(expect_test, rel=1e-12)

    def test_train_rmse_non_decreasing_in_leaf_size(self, rng):
        split = make_split(rng, n=400)
        report = tree_generalization_sweep(split, [5, 10, 25, 50, 100, 280])
        train_errors = [r.train_rmse for r in report.rows]
        assert all(b >= a - 1e-12 for a, b in zip(train_errors, train_errors[1:]))

    def test_grid_cleaned_sorted_unique_clipped(self, rng):
        split = make_split(rng, n=100)  # train = 70
        report = tree_generalization_sweep(split, [40, 10, 40, 10000, 25])
        assert [r.leaf_size for r in report.rows] == [10, 25, 40, 70]

    def test_invalid_grid(self, rng):
        split = make_split(rng, n=100)
        with pytest.raises(ValueError):
            tree_generalization_sweep(split, [])
        with pytest.raises(ValueError):
            tree_generalization_sweep(split, [0, 10])

    def test_reproducible(self, rng):
        split = make_split(rng)
        a = tree_generalization_sweep(split, [10, 50])
        b = tree_generalization_sweep(split, [10, 50])
        for ra, rb in zip(a.rows, b.rows):
            assert (ra.train_rmse, ra.test_rmse, ra.n_leaves) == \
                   (rb.train_rmse, rb.test_rmse, rb.n_leaves)

    def test_gap_shrinks_for_well_sampled_steps(self, rng):
        # Tiny leaves memorize the training set (train RMSE ~ 0, test RMSE
        # ~ noise), so their train/test gap dwarfs the single-leaf gap,
        # which is just the sampling difference between the two halves.
        n = 800
        X = rng.uniform(-3, 3, size=(n, 1))
        y = np.sin(X[:, 0]) + rng.normal(size=n) * 0.3
        split = train_test_split(Dataset(X, y, ("x",)), 0.7, seed=1)
        report = tree_generalization_sweep(split, [2, split.train.n_rows])
        gap_small = abs(report.rows[0].test_rmse - report.rows[0].train_rmse)
        gap_large = abs(report.rows[-1].test_rmse - report.rows[-1].train_rmse)
        assert gap_small > gap_large


class TestModelSweep:
    def test_constant_rows_equal_tree_sweep(self, rng):
        split = make_split(rng)
        grid = [10, 40, 120]
        tree_report = tree_generalization_sweep(split, grid)
        model_report = model_generalization_sweep(
            split, grid, FitConfig(leaf_size=10, leaf_method="constant"))
        assert model_report.kind == "full_model"
        for rt, rm in zip(tree_report.rows, model_report.rows):
            assert rt.leaf_size == rm.leaf_size
            assert rt.n_leaves == rm.n_leaves
            assert rm.train_rmse == rt.train_rmse
            assert rm.test_rmse == rt.test_rmse

    def test_best_leaf_size_flagged(self, rng):
        split = make_split(rng, n=500)
        report = model_generalization_sweep(
            split, [5, 25, 80, 200], FitConfig(leaf_size=5, leaf_method="linear"))
        by_test = min(report.rows, key=lambda r: r.test_rmse)
        assert report.best_leaf_size == by_test.leaf_size
        assert "*" in report.to_text()

    def test_linear_train_rmse_beats_tree_at_shared_sizes(self, rng):
        split = make_split(rng, n=400)
        grid = [20, 60, 150]
        tree_report = tree_generalization_sweep(split, grid)
        model_report = model_generalization_sweep(
            split, grid, FitConfig(leaf_size=20, leaf_method="linear"))
        for rt, rm in zip(tree_report.rows, model_report.rows):
            assert rm.train_rmse <= rt.train_rmse + 1e-9

    def test_rows_strictly_increasing_leaf_size(self, rng):
        split = make_split(rng)
        report = model_generalization_sweep(
            split, [100, 10, 50], FitConfig(leaf_size=10, leaf_method="constant"))
        sizes = [r.leaf_size for r in report.rows]
        assert sizes == sorted(set(sizes))

    def test_train_rmse_measured_on_kept_rows(self, rng):
        split = make_split(rng, n=300)
        config = FitConfig(leaf_size=30, leaf_method="constant",
                           outlier=OutlierConfig(enabled=True, contamination=0.05,
                                                 n_trees=20, subsample=64))
        report = model_generalization_sweep(split, [30], config)
        model = fit_segmented(split.train, config)
        kept = kept_training_set(split.train, model)
        assert kept.n_rows == model.n_train_rows < split.train.n_rows
        expect = rmse(predict_batch(model, kept), kept.response)
        assert report.rows[0].train_rmse == pytest.approx(expect, rel=1e-12)

    def test_csv_round_trip_repr_floats(self, rng, tmp_path):
        split = make_split(rng)
        report = model_generalization_sweep(
            split, [20, 80], FitConfig(leaf_size=20, leaf_method="linear"))
        path = str(tmp_path / "sweep.csv")
        report.to_csv(path)
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().strip().split("\n")
        assert lines[0] == "leaf_size,train_rmse,test_rmse,n_leaves,fit_seconds"
        assert len(lines) == 1 + len(report.rows)
        first = lines[1].split(",")
        assert float(first[1]) == report.rows[0].train_rmse  # repr round-trips


class TestSegmentSummary:
    def test_single_leaf(self, rng):
        split = make_split(rng)
        model = fit_segmented(split.train,
                              FitConfig(leaf_size=split.train.n_rows,
                                        leaf_method="constant"))
        summary = segment_summary(model, split.train)
        assert len(summary.rows) == 1
        row = summary.rows[0]
        assert row.count == split.train.n_rows
        assert row.mean_response == pytest.approx(float(split.train.response.mean()))
        assert "entire training set" in row.profile_text

    def test_two_plateaus(self, rng):
        n = 400
        X = np.column_stack([np.concatenate([rng.uniform(-2, -0.5, n // 2),
                                             rng.uniform(0.5, 2, n // 2)])])
        y = np.where(X[:, 0] <= 0, 10.0, -10.0) + rng.normal(size=n) * 0.1
        data = Dataset(X, y, ("x",))
        model = fit_segmented(data, FitConfig(leaf_size=200, leaf_method="constant"))
        summary = segment_summary(model, data)
        assert len(summary.rows) == 2
        means = [r.mean_response for r in summary.rows]
        tol = 3.0 * 0.1 / math.sqrt(n // 2)
        assert means[0] == pytest.approx(-10.0, abs=tol)
        assert means[1] == pytest.approx(10.0, abs=tol)

    def test_counts_sum_and_sorted(self, rng):
        split = make_split(rng, n=500)
        model = fit_segmented(split.train, FitConfig(leaf_size=40))
        summary = segment_summary(model, split.test)
        assert sum(r.count for r in summary.rows) == split.test.n_rows
        means = [r.mean_response for r in summary.rows]
        assert means == sorted(means)
        assert summary.to_text().count("[count=") == len(summary.rows)


class TestAblation:
    def test_zero_contamination_equals_off_arm(self, rng):
        split = make_split(rng)
        config = FitConfig(leaf_size=30, leaf_method="linear",
                           outlier=OutlierConfig(enabled=True, contamination=0.0,
                                                 n_trees=10, subsample=32))
        report = ablation_outliers(split, config)
        assert report.test_rmse_with_filter == report.test_rmse_without_filter
        assert report.removed_rows == 0

    def test_removed_count_follows_contract(self, rng):
        split = make_split(rng, n=300)  # 210 train rows
        config = FitConfig(leaf_size=30, leaf_method="constant",
                           outlier=OutlierConfig(enabled=True, contamination=0.05,
                                                 n_trees=20, subsample=64))
        report = ablation_outliers(split, config)
        assert report.removed_rows == math.floor(0.05 * 210 + 0.5) == 11
        assert "rows removed: 11" in report.to_text()

    def test_filter_helps_on_polluted_training_data(self, rng):
        # Wild rows contaminate the training half only; evaluation is on
        # clean data. Dropping them should sharpen the fit.
        X = rng.uniform(-2, 2, size=(288, 2))
        y = X[:, 0] + 0.1 * rng.normal(size=288)
        X[:8] = rng.uniform(40, 50, size=(8, 2))
        y[:8] = 1000.0
        Xt = rng.uniform(-2, 2, size=(100, 2))
        yt = Xt[:, 0] + 0.1 * rng.normal(size=100)
        split = SplitPair(train=Dataset(X, y, ("a", "b")),
                          test=Dataset(Xt, yt, ("a", "b")), seed=0)
        config = FitConfig(leaf_size=40, leaf_method="linear",
                           outlier=OutlierConfig(enabled=True, contamination=0.03,
                                                 n_trees=100, subsample=128))
        report = ablation_outliers(split, config)
        assert report.test_rmse_with_filter < report.test_rmse_without_filter


class TestCompareExternal:
    def test_identity_and_shift(self, rng, tmp_path):
        split = make_split(rng, n=100)
        path = str(tmp_path / "preds.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(repr(float(v)) for v in split.test.response) + "\n")
        assert compare_external(path, split.test) == 0.0
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(repr(float(v) + 1.0) for v in split.test.response) + "\n")
        assert compare_external(path, split.test) == pytest.approx(1.0)

    def test_header_line_skipped(self, rng, tmp_path):
        split = make_split(rng, n=100)
        path = str(tmp_path / "preds.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("prediction\n")
            fh.write("\n".join(repr(float(v)) for v in split.test.response) + "\n")
        assert compare_external(path, split.test) == 0.0

    def test_row_count_mismatch(self, rng, tmp_path):
        split = make_split(rng, n=100)
        path = str(tmp_path / "preds.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("1.0\n2.0\n")
        with pytest.raises(ValueError, match="row"):
            compare_external(path, split.test)
