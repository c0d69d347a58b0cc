"""RMSE, leaf-size generalization sweeps, segment summaries, ablation.

Two sweep flavors: `tree_generalization_sweep` scores the bare tree (leaf
means only) to show how the train/test gap narrows as leaves grow, and
`model_generalization_sweep` runs the full fit at each leaf size to locate
the generalization sweet spot. Reports serialize to plot-ready CSV and a
human-readable table.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import cart
from .data import Dataset, SplitPair
from .pipeline import FitConfig, fit_segmented, predict_batch, with_leaf_size


def rmse(pred: np.ndarray, actual: np.ndarray) -> float:
    """Root mean squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise ValueError("pred and actual must be 1-D vectors of equal length")
    if pred.size == 0:
        raise ValueError("rmse of empty vectors is undefined")
    diff = pred - actual
    return float(np.sqrt((diff * diff).mean()))


@dataclass(frozen=True)
class SweepRow:
    leaf_size: int
    train_rmse: float
    test_rmse: float
    n_leaves: int
    fit_seconds: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    kind: str                    # "tree_only" | "full_model"
    dataset_tag: str
    config: FitConfig | None
    n_train: int
    n_test: int
    best_leaf_size: int | None = None  # test-RMSE minimizer (full_model sweeps)

    def to_csv(self, path: str) -> None:
        lines = ["leaf_size,train_rmse,test_rmse,n_leaves,fit_seconds"]
        for r in self.rows:
            lines.append(f"{r.leaf_size},{r.train_rmse!r},{r.test_rmse!r},"
                         f"{r.n_leaves},{r.fit_seconds!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_text(self) -> str:
        head = (f"{self.kind} sweep on {self.dataset_tag} "
                f"(train={self.n_train}, test={self.n_test})")
        cols = f"{'leaf_size':>9}  {'train_rmse':>12}  {'test_rmse':>12}  {'leaves':>6}  {'seconds':>8}"
        body = []
        for r in self.rows:
            mark = " *" if r.leaf_size == self.best_leaf_size else ""
            body.append(f"{r.leaf_size:>9}  {r.train_rmse:>12.6g}  {r.test_rmse:>12.6g}  "
                        f"{r.n_leaves:>6}  {r.fit_seconds:>8.2f}{mark}")
        note = ["", "* lowest test RMSE"] if self.best_leaf_size is not None else []
        return "\n".join([head, cols, *body, *note])


def _clean_grid(leaf_sizes, n_train: int) -> list[int]:
    # Sorted, deduplicated, and clipped to the training-set size so the
    # stock grid works on small datasets.
    sizes = sorted(set(min(int(s), n_train) for s in leaf_sizes))
    if not sizes:
        raise ValueError("leaf_sizes must be non-empty")
    if sizes[0] < 1:
        raise ValueError("leaf sizes must be >= 1")
    return sizes


def tree_generalization_sweep(split: SplitPair, leaf_sizes,
                              dataset_tag: str = "") -> SweepReport:
    """Bare-tree train/test RMSE at each leaf size (constant leaf means).

    The interesting shape: small leaves drive train RMSE down while the
    train/test gap widens; large leaves close the gap at higher error.
    """
    train, test = split.train, split.test
    rows = []
    for ls in _clean_grid(leaf_sizes, train.n_rows):
        t0 = time.perf_counter()
        tree = cart.build_tree(train, ls)
        elapsed = time.perf_counter() - t0
        rows.append(SweepRow(
            leaf_size=ls,
            train_rmse=rmse(cart.predict_mean_batch(tree, train.features), train.response),
            test_rmse=rmse(cart.predict_mean_batch(tree, test.features), test.response),
            n_leaves=tree.n_leaves,
            fit_seconds=elapsed))
    return SweepReport(rows=rows, kind="tree_only", dataset_tag=dataset_tag,
                       config=None, n_train=train.n_rows, n_test=test.n_rows)


def model_generalization_sweep(split: SplitPair, leaf_sizes, config: FitConfig,
                               dataset_tag: str = "") -> SweepReport:
    """Full segmented-model train/test RMSE at each leaf size.

    Each row refits the whole pipeline with the template config at that
    leaf size; the leaf size with the lowest test RMSE is flagged. Train
    RMSE is measured on the rows the model actually saw (post-filter).
    """
    train, test = split.train, split.test
    rows = []
    best = None
    for ls in _clean_grid(leaf_sizes, train.n_rows):
        t0 = time.perf_counter()
        model = fit_segmented(train, with_leaf_size(config, ls))
        elapsed = time.perf_counter() - t0
        kept = kept_training_set(train, model) if model.n_removed_outliers else train
        row = SweepRow(
            leaf_size=ls,
            train_rmse=rmse(predict_batch(model, kept), kept.response),
            test_rmse=rmse(predict_batch(model, test), test.response),
            n_leaves=model.tree.n_leaves,
            fit_seconds=elapsed)
        rows.append(row)
        if best is None or row.test_rmse < best.test_rmse:
            best = row
    return SweepReport(rows=rows, kind="full_model", dataset_tag=dataset_tag,
                       config=config, n_train=train.n_rows, n_test=test.n_rows,
                       best_leaf_size=best.leaf_size if best else None)


def kept_training_set(train: Dataset, model) -> Dataset:
    """Re-derive the post-filter training rows by re-running the filter."""
    from .outliers import anomaly_score_batch, fit_forest, removal_indices

    cfg = model.config.outlier
    forest = fit_forest(train, n_trees=cfg.n_trees,
                        subsample=min(cfg.subsample, max(train.n_rows, 2)),
                        seed=model.config.seed)
    scores = anomaly_score_batch(forest, train.features)
    removed = removal_indices(scores, cfg.contamination)
    keep = np.ones(train.n_rows, dtype=bool)
    keep[removed] = False
    return train.take(np.nonzero(keep)[0])


@dataclass(frozen=True)
class SegmentRow:
    segment_id: int
    count: int
    mean_response: float
    response_std: float
    profile_text: str


@dataclass
class SegmentSummary:
    rows: list[SegmentRow]

    def to_text(self) -> str:
        parts = []
        for r in self.rows:
            parts.append(f"[count={r.count} mean={r.mean_response:.6g} "
                         f"std={r.response_std:.6g}]\n{r.profile_text}")
        return "\n\n".join(parts)


def segment_summary(model, data: Dataset) -> SegmentSummary:
    """Per-segment count / mean / std of the routed rows, sorted by mean.

    Only segments that receive at least one row appear; counts sum to the
    number of rows in `data`.
    """
    ids = cart.assign_leaf_batch(model.tree, data.features)
    rows = []
    for segment_id in np.unique(ids):
        sel = ids == segment_id
        y = data.response[sel]
        rows.append(SegmentRow(
            segment_id=int(segment_id),
            count=int(sel.sum()),
            mean_response=float(y.mean()),
            response_std=float(y.std()),
            profile_text=cart.segment_profile(model.tree, int(segment_id)).to_text()))
    rows.sort(key=lambda r: r.mean_response)
    return SegmentSummary(rows=rows)


@dataclass(frozen=True)
class AblationReport:
    test_rmse_without_filter: float
    test_rmse_with_filter: float
    removed_rows: int
    contamination: float

    def to_text(self) -> str:
        return "\n".join([
            f"test RMSE without outlier removal: {self.test_rmse_without_filter:.6g}",
            f"test RMSE after outlier removal:   {self.test_rmse_with_filter:.6g}",
            f"rows removed: {self.removed_rows} (contamination={self.contamination:g})",
        ])


def ablation_outliers(split: SplitPair, config: FitConfig) -> AblationReport:
    """Fit with and without the outlier filter (same seed), compare test RMSE."""
    off = dataclasses.replace(config, outlier=dataclasses.replace(config.outlier, enabled=False))
    on = dataclasses.replace(config, outlier=dataclasses.replace(config.outlier, enabled=True))
    model_off = fit_segmented(split.train, off)
    model_on = fit_segmented(split.train, on)
    return AblationReport(
        test_rmse_without_filter=rmse(predict_batch(model_off, split.test), split.test.response),
        test_rmse_with_filter=rmse(predict_batch(model_on, split.test), split.test.response),
        removed_rows=model_on.n_removed_outliers,
        contamination=config.outlier.contamination)


def compare_external(pred_file: str, test: Dataset) -> float:
    """RMSE of externally produced predictions (one value per row, test order)."""
    values = []
    with open(pred_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if lineno == 1:
                try:
                    values.append(float(text))
                except ValueError:
                    continue  # header line
            else:
                values.append(float(text))
    if len(values) != test.n_rows:
        raise ValueError(f"{pred_file} has {len(values)} predictions "
                         f"for {test.n_rows} test rows")
    return rmse(np.asarray(values, dtype=np.float64), test.response)
