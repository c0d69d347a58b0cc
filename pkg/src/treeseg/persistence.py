"""Versioned, deterministic JSON serialization of fitted models.

One self-contained, human-diffable document per model: config snapshot,
tree, per-segment model payloads, scalers, and the fit report. Numbers are
rendered with repr-lossless formatting so every stored double round-trips
bit-exactly; keys are sorted so saving the same model twice produces
byte-identical files. Loading re-checks structural invariants and rejects
documents written by a newer schema.

The GP Cholesky factor is not stored: it is recomputed from the stored
inputs/parameters on load, through the same kernel code path, which yields
the identical factor. Posterior means depend only on the stored alpha
vector, so round-tripped predictions are exactly equal either way.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import cart
from .data import Scaler
from .leaf_models import (ConstantModel, GPModel, KernelParams, LinearModel,
                          kernel_matrix)
from .pipeline import FitConfig, LeafFitStatus, OutlierConfig, SegmentedModel

SCHEMA_VERSION = 1
_DOCUMENT_KIND = "segmented-regression-model"


class PersistenceError(ValueError):
    """Raised when a model document cannot be written, parsed, or validated."""


def _config_doc(config: FitConfig) -> dict:
    return {
        "leaf_size": config.leaf_size,
        "leaf_method": config.leaf_method,
        "seed": config.seed,
        "ridge_eps": config.ridge_eps,
        "gp_max_iters": config.gp_max_iters,
        "gp_init": dict(config.gp_init) if config.gp_init else None,
        "outlier": {
            "enabled": config.outlier.enabled,
            "contamination": config.outlier.contamination,
            "n_trees": config.outlier.n_trees,
            "subsample": config.outlier.subsample,
        },
    }


def _config_from_doc(doc: dict) -> FitConfig:
    out = doc["outlier"]
    return FitConfig(
        leaf_size=int(doc["leaf_size"]),
        leaf_method=str(doc["leaf_method"]),
        seed=int(doc["seed"]),
        ridge_eps=float(doc["ridge_eps"]),
        gp_max_iters=int(doc["gp_max_iters"]),
        gp_init=dict(doc["gp_init"]) if doc.get("gp_init") else None,
        outlier=OutlierConfig(
            enabled=bool(out["enabled"]),
            contamination=float(out["contamination"]),
            n_trees=int(out["n_trees"]),
            subsample=int(out["subsample"])))


def _leaf_model_doc(model) -> dict:
    if isinstance(model, ConstantModel):
        return {"type": "constant", "mean": model.mean}
    if isinstance(model, LinearModel):
        return {"type": "linear", "weights": model.weights.tolist(),
                "intercept": model.intercept, "ridge_eps": model.ridge_eps,
                "used_fallback": model.used_fallback}
    if isinstance(model, GPModel):
        p = model.params
        return {"type": "gp",
                "params": {"linear_variance": p.linear_variance,
                           "rbf_variance": p.rbf_variance,
                           "rbf_lengthscale": p.rbf_lengthscale,
                           "noise_variance": p.noise_variance},
                "training_inputs": model.training_inputs.tolist(),
                "alpha": model.alpha.tolist(),
                "y_mean": model.y_mean,
                "jitter": model.jitter,
                "log_marginal": model.log_marginal,
                "n_iterations": model.n_iterations}
    raise PersistenceError(f"cannot serialize leaf model of type {type(model).__name__}")


def _leaf_model_from_doc(doc: dict, n_features: int):
    kind = doc.get("type")
    if kind == "constant":
        return ConstantModel(mean=float(doc["mean"]))
    if kind == "linear":
        weights = np.asarray(doc["weights"], dtype=np.float64)
        if weights.shape != (n_features,):
            raise PersistenceError(
                f"linear model has {weights.shape[0]} weights for {n_features} features")
        weights.setflags(write=False)
        return LinearModel(weights=weights, intercept=float(doc["intercept"]),
                           ridge_eps=float(doc["ridge_eps"]),
                           used_fallback=bool(doc["used_fallback"]))
    if kind == "gp":
        p = doc["params"]
        params = KernelParams(linear_variance=float(p["linear_variance"]),
                              rbf_variance=float(p["rbf_variance"]),
                              rbf_lengthscale=float(p["rbf_lengthscale"]),
                              noise_variance=float(p["noise_variance"]))
        X = np.asarray(doc["training_inputs"], dtype=np.float64)
        alpha = np.asarray(doc["alpha"], dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != n_features:
            raise PersistenceError("gp training inputs do not match the feature count")
        if alpha.shape != (X.shape[0],):
            raise PersistenceError("gp alpha length does not match its training inputs")
        jitter = float(doc["jitter"])
        K = kernel_matrix(params, X, X)
        diag = np.arange(X.shape[0])
        K[diag, diag] = K[diag, diag] + params.noise_variance + jitter
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise PersistenceError("stored gp covariance is not positive definite") from exc
        X.setflags(write=False)
        alpha.setflags(write=False)
        return GPModel(params=params, training_inputs=X, alpha=alpha, chol_factor=L,
                       y_mean=float(doc["y_mean"]), jitter=jitter,
                       log_marginal=float(doc["log_marginal"]),
                       n_iterations=int(doc.get("n_iterations", 0)))
    raise PersistenceError(f"unknown leaf model type {kind!r}")


def _scaler_doc(scaler: Scaler | None) -> dict | None:
    if scaler is None:
        return None
    return {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()}


def _scaler_from_doc(doc: dict | None, n_features: int) -> Scaler | None:
    if doc is None:
        return None
    mean = np.asarray(doc["mean"], dtype=np.float64)
    std = np.asarray(doc["std"], dtype=np.float64)
    if mean.shape != (n_features,) or std.shape != (n_features,):
        raise PersistenceError("scaler dimensions do not match the feature count")
    mean.setflags(write=False)
    std.setflags(write=False)
    return Scaler(mean=mean, std=std)


def model_document(model: SegmentedModel, ingestion: dict | None = None) -> dict:
    """The complete serializable document for a fitted model."""
    ids = sorted(model.leaf_models)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": _DOCUMENT_KIND,
        "config": _config_doc(model.config),
        "tree": cart.tree_to_dict(model.tree),
        "leaf_models": {str(i): _leaf_model_doc(model.leaf_models[i]) for i in ids},
        "scalers": {str(i): _scaler_doc(model.scalers.get(i)) for i in ids},
        "fit_report": {str(i): {"status": s.status, "method": s.method, "reason": s.reason}
                       for i, s in sorted(model.fit_report.items())},
        "n_train_rows": model.n_train_rows,
        "n_removed_outliers": model.n_removed_outliers,
        "ingestion": ingestion,
    }


def save_model(model: SegmentedModel, path: str, ingestion: dict | None = None) -> None:
    """Write the model document atomically; identical models save identical bytes."""
    doc = model_document(model, ingestion)
    try:
        text = json.dumps(doc, sort_keys=True, indent=1, allow_nan=False)
    except ValueError as exc:
        raise PersistenceError(f"model contains non-finite numbers: {exc}") from exc
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    os.replace(tmp, path)


def load_bundle(path: str) -> tuple[SegmentedModel, dict | None]:
    """Load and validate a model document; also returns its ingestion recipe."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"{path} is not a valid model document: {exc}") from exc
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise PersistenceError(f"{path} is not a model document")
    version = doc["schema_version"]
    if not isinstance(version, int) or version > SCHEMA_VERSION:
        raise PersistenceError(
            f"{path} has schema_version {version!r}, newer than the supported "
            f"{SCHEMA_VERSION}; upgrade this package to read it")
    if version != SCHEMA_VERSION:
        raise PersistenceError(f"{path} has unsupported schema_version {version!r}")
    if doc.get("kind") != _DOCUMENT_KIND:
        raise PersistenceError(f"{path} is not a {_DOCUMENT_KIND} document")

    try:
        config = _config_from_doc(doc["config"])
        tree = cart.tree_from_dict(doc["tree"])
        n_features = tree.n_features
        leaf_models = {int(k): _leaf_model_from_doc(v, n_features)
                       for k, v in doc["leaf_models"].items()}
        scalers = {int(k): _scaler_from_doc(v, n_features)
                   for k, v in doc["scalers"].items()}
        report = {int(k): LeafFitStatus(segment_id=int(k), status=str(v["status"]),
                                        method=str(v["method"]), reason=v.get("reason"))
                  for k, v in doc["fit_report"].items()}
        n_train_rows = int(doc["n_train_rows"])
        n_removed = int(doc["n_removed_outliers"])
    except (KeyError, TypeError, ValueError, cart.CartError) as exc:
        if isinstance(exc, PersistenceError):
            raise
        raise PersistenceError(f"{path} failed validation: {exc}") from exc

    expected = set(range(tree.n_leaves))
    if set(leaf_models) != expected:
        raise PersistenceError(f"{path}: leaf models do not cover every segment")
    if set(scalers) != expected:
        raise PersistenceError(f"{path}: scalers do not cover every segment")
    model = SegmentedModel(tree=tree, leaf_models=leaf_models, scalers=scalers,
                           config=config, fit_report=report,
                           n_train_rows=n_train_rows, n_removed_outliers=n_removed)
    return model, doc.get("ingestion")


def load_model(path: str) -> SegmentedModel:
    """Load a model document, validating structure and schema version."""
    return load_bundle(path)[0]
