"""End-to-end segmented regression: filter, segment, fit per leaf, score.

The training flow is: optionally drop outliers from the training set, grow
the segmentation tree, then fit one regressor per leaf (with per-leaf input
standardization for the linear and GP methods). Prediction routes a record
down the tree and applies that segment's model. Any leaf whose fit fails
falls back to the segment's constant mean and the fallback is recorded —
a model always comes back able to predict.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import cart
from .data import Dataset, Scaler
from .leaf_models import (ConstantModel, KernelParams, LeafFitError, LeafModel,
                          fit_constant, fit_gp, fit_ols)
from .outliers import filter_outliers, fit_forest

LEAF_METHODS = ("constant", "linear", "gp")


class PipelineError(ValueError):
    """Raised for invalid fit configurations."""


@dataclass(frozen=True)
class OutlierConfig:
    enabled: bool = False
    contamination: float = 0.05
    n_trees: int = 100
    subsample: int = 256

    def __post_init__(self):
        if not 0.0 <= self.contamination < 1.0:
            raise PipelineError("contamination must be in [0, 1)")
        if self.n_trees < 1:
            raise PipelineError("n_trees must be >= 1")
        if self.subsample < 2:
            raise PipelineError("subsample must be >= 2")


# Keys accepted in FitConfig.gp_init to pin individual kernel parameters.
_GP_PARAM_NAMES = ("linear_variance", "rbf_variance", "rbf_lengthscale", "noise_variance")


@dataclass(frozen=True)
class FitConfig:
    """Everything that determines a fit, so runs are reproducible."""

    leaf_size: int = 100
    leaf_method: str = "linear"
    outlier: OutlierConfig = field(default_factory=OutlierConfig)
    seed: int = 0
    ridge_eps: float = 0.0
    gp_max_iters: int = 100
    gp_init: dict | None = None  # optional overrides of the per-leaf defaults

    def __post_init__(self):
        if self.leaf_size < 1:
            raise PipelineError("leaf_size must be >= 1")
        if self.leaf_method not in LEAF_METHODS:
            raise PipelineError(
                f"unknown leaf_method {self.leaf_method!r}; expected one of {LEAF_METHODS}")
        if self.ridge_eps < 0:
            raise PipelineError("ridge_eps must be >= 0")
        if self.gp_max_iters < 0:
            raise PipelineError("gp_max_iters must be >= 0")
        if self.gp_init is not None:
            unknown = set(self.gp_init) - set(_GP_PARAM_NAMES)
            if unknown:
                raise PipelineError(f"unknown gp_init keys: {sorted(unknown)}")


@dataclass(frozen=True)
class LeafFitStatus:
    segment_id: int
    status: str            # "fitted" | "fallback"
    method: str            # model actually in place for this segment
    reason: str | None = None


@dataclass
class SegmentedModel:
    tree: cart.RegressionTree
    leaf_models: dict[int, LeafModel]
    scalers: dict[int, Scaler | None]
    config: FitConfig
    fit_report: dict[int, LeafFitStatus]
    n_train_rows: int           # rows the tree actually saw (post-filter)
    n_removed_outliers: int = 0

    @property
    def n_features(self) -> int:
        return self.tree.n_features

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.tree.feature_names


def default_gp_init(y: np.ndarray, n_features: int,
                    overrides: dict | None = None) -> KernelParams:
    """Data-driven kernel initialization: variances from var(y), unit-ish scale."""
    var_y = float(np.var(y))
    values = {
        "linear_variance": var_y,
        "rbf_variance": var_y,
        "rbf_lengthscale": float(np.sqrt(n_features)),
        "noise_variance": 0.1 * var_y,
    }
    if overrides:
        values.update(overrides)
    return KernelParams(**values)


def _fit_leaf(X: np.ndarray, y: np.ndarray, config: FitConfig,
              segment_id: int) -> tuple[LeafModel, Scaler | None, LeafFitStatus]:
    method = config.leaf_method
    if method == "constant":
        return (fit_constant(y), None,
                LeafFitStatus(segment_id, "fitted", "constant"))

    scaler = Scaler.fit(X)
    Xs = scaler.transform(X)
    try:
        if method == "linear":
            model = fit_ols(Xs, y, config.ridge_eps)
            reason = "ridge fallback engaged" if model.used_fallback else None
            return model, scaler, LeafFitStatus(segment_id, "fitted", "linear", reason)
        if float(np.var(y)) == 0.0:
            raise LeafFitError("response is constant within the segment")
        init = default_gp_init(y, X.shape[1], config.gp_init)
        model = fit_gp(Xs, y, init, max_iters=config.gp_max_iters)
        return model, scaler, LeafFitStatus(segment_id, "fitted", "gp")
    except LeafFitError as exc:
        return (fit_constant(y), None,
                LeafFitStatus(segment_id, "fallback", "constant", str(exc)))


def fit_segmented(train: Dataset, config: FitConfig) -> SegmentedModel:
    """Algorithm: filter outliers (train only), segment, fit each segment.

    Deterministic for fixed (train, config). Leaf-fit failures fall back to
    the segment's constant mean, recorded in fit_report.
    """
    if config.leaf_size > train.n_rows:
        raise PipelineError(
            f"leaf_size={config.leaf_size} exceeds the {train.n_rows} training rows")

    n_removed = 0
    if config.outlier.enabled:
        forest = fit_forest(train, n_trees=config.outlier.n_trees,
                            subsample=min(config.outlier.subsample, max(train.n_rows, 2)),
                            seed=config.seed)
        train, removed = filter_outliers(train, forest, config.outlier.contamination)
        n_removed = removed.n_rows
        if config.leaf_size > train.n_rows:
            raise PipelineError(
                "outlier filtering left fewer rows than leaf_size; lower the "
                "contamination or the leaf size")

    tree = cart.build_tree(train, config.leaf_size)
    leaf_models: dict[int, LeafModel] = {}
    scalers: dict[int, Scaler | None] = {}
    report: dict[int, LeafFitStatus] = {}
    for leaf in cart.leaves_of(tree):
        rows = leaf.row_indices
        model, scaler, status = _fit_leaf(train.features[rows], train.response[rows],
                                          config, leaf.segment_id)
        leaf_models[leaf.segment_id] = model
        scalers[leaf.segment_id] = scaler
        report[leaf.segment_id] = status
    return SegmentedModel(tree=tree, leaf_models=leaf_models, scalers=scalers,
                          config=config, fit_report=report,
                          n_train_rows=train.n_rows, n_removed_outliers=n_removed)


def _features_of(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.features
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise PipelineError("expected a Dataset or a 2-D feature matrix")
    return X


def predict_batch(model: SegmentedModel, data) -> np.ndarray:
    """Predictions for every row; grouped by segment, elementwise equal to
    calling predict on each row (same reductions, batch-size invariant)."""
    X = _features_of(data)
    if X.shape[1] != model.n_features:
        raise PipelineError(f"expected {model.n_features} feature columns, got {X.shape[1]}")
    out = np.empty(X.shape[0], dtype=np.float64)
    ids = cart.assign_leaf_batch(model.tree, X)
    for segment_id in np.unique(ids):
        sel = np.nonzero(ids == segment_id)[0]
        block = X[sel]
        scaler = model.scalers[int(segment_id)]
        if scaler is not None:
            block = scaler.transform(block)
        out[sel] = model.leaf_models[int(segment_id)].predict(block)
    return out


def predict(model: SegmentedModel, x) -> float:
    """Prediction for one record — routed through the batch path (1-row batch)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.n_features:
        raise PipelineError(f"expected {model.n_features} feature values, got {x.shape[0]}")
    return float(predict_batch(model, x[None, :])[0])


def with_leaf_size(config: FitConfig, leaf_size: int) -> FitConfig:
    """Copy of config at a different leaf size (sweep helper)."""
    return dataclasses.replace(config, leaf_size=leaf_size)
