"""Command-line interface: fit, predict, sweep, profile, outliers.

A run is described by a JSON config file; individual flags override file
values (flags win). Every command that computes writes the fully resolved
configuration into the output directory, so any result can be reproduced
from the artifacts alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import cart, evaluation
from .data import ColumnSpec, DataError, Dataset, ingest, load_csv, train_test_split
from .outliers import anomaly_score_batch, fit_forest, removal_indices
from .persistence import PersistenceError, load_bundle, save_model
from .pipeline import FitConfig, OutlierConfig, PipelineError, fit_segmented, predict_batch

_DEFAULT_SWEEP = [10, 20, 40, 70, 100, 200, 400, 700, 1000, 2000]


@dataclass
class RunConfig:
    """Fully resolved run description (file values + flag overrides)."""

    data_path: str
    columns: list[ColumnSpec] | None  # None: all numeric, last column is the target
    train_fraction: float = 0.7
    split_seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    sweep_sizes: list[int] = field(default_factory=lambda: list(_DEFAULT_SWEEP))
    out_dir: str = "runs"
    dataset_tag: str = "dataset"
    threads: int = 1

    def to_doc(self) -> dict:
        return {
            "data": {
                "path": self.data_path,
                "tag": self.dataset_tag,
                "columns": None if self.columns is None else [
                    {"name": c.name, "kind": c.kind, "transform": c.transform}
                    for c in self.columns],
            },
            "split": {"train_fraction": self.train_fraction, "seed": self.split_seed},
            "fit": {
                "leaf_size": self.fit.leaf_size,
                "leaf_method": self.fit.leaf_method,
                "seed": self.fit.seed,
                "ridge_eps": self.fit.ridge_eps,
                "gp_max_iters": self.fit.gp_max_iters,
                "gp_init": self.fit.gp_init,
                "outlier": {
                    "enabled": self.fit.outlier.enabled,
                    "contamination": self.fit.outlier.contamination,
                    "n_trees": self.fit.outlier.n_trees,
                    "subsample": self.fit.outlier.subsample,
                },
            },
            "sweep": {"leaf_sizes": self.sweep_sizes},
            "out_dir": self.out_dir,
            "threads": self.threads,
        }


def _columns_from_doc(items) -> list[ColumnSpec]:
    return [ColumnSpec(name=str(c["name"]), kind=str(c.get("kind", "numeric")),
                       transform=str(c.get("transform", "none"))) for c in items]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file, and flag overrides."""
    doc: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError(f"config file {args.config} must hold a JSON object")

    data_doc = doc.get("data", {})
    split_doc = doc.get("split", {})
    fit_doc = doc.get("fit", {})
    out_doc = fit_doc.get("outlier", {})
    sweep_doc = doc.get("sweep", {})

    def pick(flag_value, file_value, default):
        if flag_value is not None:
            return flag_value
        if file_value is not None:
            return file_value
        return default

    data_path = pick(getattr(args, "data", None), data_doc.get("path"), None)
    if not data_path:
        raise DataError("no dataset given: pass --data or set data.path in the config file")

    outlier_flag = getattr(args, "outliers", None)
    outlier = OutlierConfig(
        enabled=pick(None if outlier_flag is None else outlier_flag == "on",
                     out_doc.get("enabled"), False),
        contamination=float(pick(getattr(args, "contamination", None),
                                 out_doc.get("contamination"), 0.05)),
        n_trees=int(pick(getattr(args, "n_trees", None), out_doc.get("n_trees"), 100)),
        subsample=int(pick(None, out_doc.get("subsample"), 256)))
    fit = FitConfig(
        leaf_size=int(pick(getattr(args, "leaf_size", None), fit_doc.get("leaf_size"), 100)),
        leaf_method=str(pick(getattr(args, "leaf_method", None),
                             fit_doc.get("leaf_method"), "linear")),
        seed=int(pick(getattr(args, "seed", None), fit_doc.get("seed"), 0)),
        ridge_eps=float(pick(getattr(args, "ridge_eps", None), fit_doc.get("ridge_eps"), 0.0)),
        gp_max_iters=int(pick(getattr(args, "gp_max_iters", None),
                              fit_doc.get("gp_max_iters"), 100)),
        gp_init=fit_doc.get("gp_init"),
        outlier=outlier)

    columns_doc = data_doc.get("columns")
    tag_default = os.path.splitext(os.path.basename(data_path))[0] or "dataset"
    return RunConfig(
        data_path=str(data_path),
        columns=None if columns_doc is None else _columns_from_doc(columns_doc),
        train_fraction=float(pick(getattr(args, "train_fraction", None),
                                  split_doc.get("train_fraction"), 0.7)),
        split_seed=int(pick(getattr(args, "split_seed", None), split_doc.get("seed"), 0)),
        fit=fit,
        sweep_sizes=[int(v) for v in pick(getattr(args, "leaf_sizes", None),
                                          sweep_doc.get("leaf_sizes"), _DEFAULT_SWEEP)],
        out_dir=str(pick(getattr(args, "out_dir", None), doc.get("out_dir"), "runs")),
        dataset_tag=str(pick(getattr(args, "tag", None), data_doc.get("tag"), tag_default)),
        threads=int(pick(getattr(args, "threads", None), doc.get("threads"), 1)))


def _infer_columns(path: str) -> list[ColumnSpec]:
    """Default schema: every column numeric, the last one is the target."""
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
    header = [h.strip() for h in header]
    if len(header) < 2:
        raise DataError(f"{path} needs at least one feature column and a target column")
    specs = [ColumnSpec(name=n) for n in header[:-1]]
    specs.append(ColumnSpec(name=header[-1], kind="target"))
    return specs


def _prepare(cfg: RunConfig):
    """Shared front half: output dir, config echo, ingestion, split."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_doc(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    columns = cfg.columns if cfg.columns is not None else _infer_columns(cfg.data_path)
    data, report = load_csv(cfg.data_path, columns)
    print(report.to_text(), file=sys.stderr)
    return columns, data, report


def _ingestion_recipe(columns: list[ColumnSpec], report) -> dict:
    return {
        "columns": [{"name": c.name, "kind": c.kind, "transform": c.transform}
                    for c in columns],
        "levels": {name: list(levels) for name, levels in report.encodings.items()},
    }


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    columns, data, report = _prepare(cfg)
    split = train_test_split(data, cfg.train_fraction, cfg.split_seed)
    model = fit_segmented(split.train, cfg.fit)

    kept = (evaluation.kept_training_set(split.train, model)
            if model.n_removed_outliers else split.train)
    train_rmse = evaluation.rmse(predict_batch(model, kept), kept.response)
    test_rmse = evaluation.rmse(predict_batch(model, split.test), split.test.response)

    model_path = os.path.join(cfg.out_dir, "model.json")
    save_model(model, model_path, ingestion=_ingestion_recipe(columns, report))

    lines = [
        f"dataset: {cfg.data_path} ({data.n_rows} rows, {data.n_features} features)",
        f"train/test: {split.train.n_rows}/{split.test.n_rows} (fraction {cfg.train_fraction}, seed {cfg.split_seed})",
        f"outliers removed: {model.n_removed_outliers}",
        f"leaf_size: {cfg.fit.leaf_size}   leaf_method: {cfg.fit.leaf_method}   leaves: {model.tree.n_leaves}",
        f"train RMSE: {train_rmse:.6g}",
        f"test RMSE: {test_rmse:.6g}",
        "",
        "per-segment fit status:",
    ]
    for segment_id in sorted(model.fit_report):
        s = model.fit_report[segment_id]
        note = f" ({s.reason})" if s.reason else ""
        lines.append(f"  segment {segment_id}: {s.status} [{s.method}]{note}")
    report_text = "\n".join(lines)
    with open(os.path.join(cfg.out_dir, "fit_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report_text + "\n")
    print(report_text)
    print(f"model written to {model_path}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model, recipe = load_bundle(args.model)
    if recipe is None:
        # Fall back to the model's feature names, all numeric.
        recipe = {"columns": [{"name": n} for n in model.feature_names], "levels": {}}

    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"empty file: {args.input}") from None
        raw_rows = [row for row in reader if row and not (len(row) == 1 and row[0].strip() == "")]

    specs = _columns_from_doc(recipe["columns"])
    specs = [s for s in specs if s.kind != "target" or s.name in header]
    levels = {name: tuple(lv) for name, lv in recipe.get("levels", {}).items()}
    features, _, _, report = ingest(args.input, specs, levels=levels, require_target=False)
    if report.rows_dropped:
        raise DataError(
            f"{args.input}: {report.rows_dropped} rows have missing or unparseable "
            "values; prediction requires complete rows so the output aligns with the input")
    if report.unseen_category_rows:
        print(f"note: {report.unseen_category_rows} rows carry category levels unseen "
              "at fit time (encoded as all-zero indicators)", file=sys.stderr)

    predictions = predict_batch(model, features)
    segment_ids = cart.assign_leaf_batch(model.tree, features)

    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["prediction", "segment_id"])
        for row, pred, seg in zip(raw_rows, predictions, segment_ids):
            writer.writerow(row + [repr(float(pred)), int(seg)])
    print(f"{len(raw_rows)} predictions written to {args.output}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _, data, _ = _prepare(cfg)
    split = train_test_split(data, cfg.train_fraction, cfg.split_seed)
    if args.kind == "tree":
        report = evaluation.tree_generalization_sweep(split, cfg.sweep_sizes,
                                                      dataset_tag=cfg.dataset_tag)
    else:
        report = evaluation.model_generalization_sweep(split, cfg.sweep_sizes, cfg.fit,
                                                       dataset_tag=cfg.dataset_tag)
    out_path = os.path.join(cfg.out_dir, f"sweep_{cfg.dataset_tag}_{args.kind}.csv")
    report.to_csv(out_path)
    print(report.to_text())
    print(f"sweep written to {out_path}")
    return 0


def cmd_profile(args: argparse.Namespace) -> int:
    model, _ = load_bundle(args.model)
    leaves = {leaf.segment_id: leaf for leaf in cart.leaves_of(model.tree)}
    if args.all:
        ordered = sorted(leaves.values(), key=lambda leaf: leaf.mean_response)
        ids = [leaf.segment_id for leaf in ordered]
    else:
        if args.segment is None:
            raise DataError("pass --segment N or --all")
        ids = [args.segment]
    blocks = []
    for segment_id in ids:
        profile = cart.segment_profile(model.tree, segment_id)
        std = leaves[segment_id].response_std
        blocks.append(profile.to_text() + f"\n  [response std {std:.6g}]")
    print("\n\n".join(blocks))
    if args.all:
        total = sum(leaf.count for leaf in leaves.values())
        print(f"\n{len(leaves)} segments, {total} training rows")
    return 0


def cmd_outliers(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _, data, _ = _prepare(cfg)
    oc = cfg.fit.outlier
    forest = fit_forest(data, n_trees=oc.n_trees,
                        subsample=min(oc.subsample, max(data.n_rows, 2)),
                        seed=cfg.fit.seed)
    scores = anomaly_score_batch(forest, data.features)
    removed = set(removal_indices(scores, oc.contamination).tolist())
    out_path = os.path.join(cfg.out_dir, "outlier_scores.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "score", "removed"])
        for i, s in enumerate(scores):
            writer.writerow([i, repr(float(s)), int(i in removed)])
    print(f"{len(removed)} of {data.n_rows} rows flagged "
          f"(contamination {oc.contamination:g}); scores written to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeseg",
        description="Segmented regression: tree segmentation with per-segment models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p: argparse.ArgumentParser, sweep: bool = False):
        p.add_argument("--config", help="JSON run-config file (flags override it)")
        p.add_argument("--data", help="dataset CSV path")
        p.add_argument("--tag", help="short dataset tag used in output names")
        p.add_argument("--out-dir", help="output directory (default runs/)")
        p.add_argument("--train-fraction", type=float, help="train split fraction (default 0.7)")
        p.add_argument("--split-seed", type=int, help="row-split seed (default 0)")
        p.add_argument("--seed", type=int, help="fit seed (default 0)")
        p.add_argument("--leaf-size", type=int, help="minimum rows per segment (default 100)")
        p.add_argument("--leaf-method", choices=["constant", "linear", "gp"],
                       help="per-segment regressor (default linear)")
        p.add_argument("--ridge-eps", type=float, help="ridge strength for linear leaves (default 0)")
        p.add_argument("--gp-max-iters", type=int, help="GP optimizer iteration cap (default 100)")
        p.add_argument("--outliers", choices=["on", "off"], help="toggle outlier filtering")
        p.add_argument("--contamination", type=float,
                       help="fraction of training rows to remove (default 0.05)")
        p.add_argument("--n-trees", type=int, help="isolation forest size (default 100)")
        p.add_argument("--threads", type=int,
                       help="cap on worker threads (this build computes serially)")
        if sweep:
            p.add_argument("--leaf-sizes", type=int, nargs="+",
                           help="leaf sizes to sweep (default 10..2000 grid)")

    p_fit = sub.add_parser("fit", help="fit a segmented model and save it")
    add_config_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="score a CSV with a saved model")
    p_pred.add_argument("--model", required=True, help="model document from `fit`")
    p_pred.add_argument("--input", required=True, help="input CSV to score")
    p_pred.add_argument("--output", required=True, help="output CSV (input + prediction column)")
    p_pred.set_defaults(func=cmd_predict)

    p_sweep = sub.add_parser("sweep", help="train/test RMSE across leaf sizes")
    p_sweep.add_argument("--kind", choices=["tree", "model"], required=True,
                         help="tree: bare segmentation means; model: full pipeline")
    add_config_flags(p_sweep, sweep=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_prof = sub.add_parser("profile", help="print segment rule paths from a model")
    p_prof.add_argument("--model", required=True)
    p_prof.add_argument("--segment", type=int, help="segment id to describe")
    p_prof.add_argument("--all", action="store_true", help="describe every segment, sorted by mean")
    p_prof.set_defaults(func=cmd_profile)

    p_out = sub.add_parser("outliers", help="score every row with the isolation forest")
    add_config_flags(p_out)
    p_out.set_defaults(func=cmd_outliers)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (DataError, PipelineError, PersistenceError, cart.CartError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
