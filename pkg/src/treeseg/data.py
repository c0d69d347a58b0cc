"""Tabular data ingestion, encoding, splitting, and standardization.

Everything downstream (tree building, leaf models, evaluation) consumes the
dense numeric `Dataset` produced here. Categorical columns are one-hot
encoded at ingestion; rows with missing or unparseable cells are dropped and
counted so the loss is visible in the ingestion report.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

COLUMN_KINDS = ("numeric", "categorical", "target")
TRANSFORMS = ("none", "log")


class DataError(ValueError):
    """Raised when a file, column spec, or split request cannot be honored."""


@dataclass(frozen=True)
class ColumnSpec:
    """How one source column is interpreted during ingestion.

    kind:
        "numeric"     parsed as float and used as a feature
        "categorical" one-hot encoded into a block of indicator features
        "target"      parsed as float and used as the response
    transform:
        "log" takes the natural log; only valid when every observed value of
        the column is strictly positive, and never valid for categoricals.
    """

    name: str
    kind: str = "numeric"
    transform: str = "none"

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.transform not in TRANSFORMS:
            raise DataError(f"unknown transform {self.transform!r} for {self.name!r}")
        if self.kind == "categorical" and self.transform != "none":
            raise DataError(f"transform {self.transform!r} not valid for categorical column {self.name!r}")


@dataclass(frozen=True)
class Dataset:
    """Dense numeric feature matrix plus response vector.

    Immutable after construction; the arrays are marked read-only so they can
    be shared across threads without copying.
    """

    features: np.ndarray
    response: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        resp = np.ascontiguousarray(np.asarray(self.response, dtype=np.float64))
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if resp.ndim != 1 or resp.shape[0] != feats.shape[0]:
            raise DataError("response must be a vector with one entry per row")
        if len(self.feature_names) != feats.shape[1]:
            raise DataError("feature_names length must equal the number of feature columns")
        if feats.size and not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")
        if resp.size and not np.all(np.isfinite(resp)):
            raise DataError("response contains non-finite values")
        feats.setflags(write=False)
        resp.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "response", resp)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        """New Dataset holding the given rows (fancy indexing, copies)."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.response[idx], self.feature_names)


@dataclass(frozen=True)
class SplitPair:
    """Disjoint train/test row split of one source dataset."""

    train: Dataset
    test: Dataset
    seed: int


@dataclass
class IngestionReport:
    """What happened while turning a CSV file into a Dataset."""

    path: str
    rows_read: int = 0
    rows_dropped: int = 0
    unseen_category_rows: int = 0
    encodings: dict[str, tuple[str, ...]] = field(default_factory=dict)
    n_rows: int = 0
    n_features: int = 0

    def to_text(self) -> str:
        lines = [
            f"file: {self.path}",
            f"rows_read: {self.rows_read}",
            f"rows_dropped: {self.rows_dropped}",
            f"rows_kept: {self.n_rows}",
            f"feature_columns: {self.n_features}",
        ]
        for name, levels in self.encodings.items():
            lines.append(f"encoded: {name} -> {len(levels)} indicator columns")
        if self.unseen_category_rows:
            lines.append(f"rows_with_unseen_categories: {self.unseen_category_rows}")
        return "\n".join(lines)


def _parse_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _read_rows(path: str, specs: list[ColumnSpec]):
    """Parse the CSV, returning raw per-spec cell values with bad rows dropped."""
    import csv

    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError("duplicate column names in specs")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        col_idx = {}
        for spec in specs:
            if spec.name not in header:
                raise DataError(f"column {spec.name!r} not found in header of {path}")
            col_idx[spec.name] = header.index(spec.name)
        rows = []
        rows_read = 0
        rows_dropped = 0
        max_idx = max(col_idx.values())
        for raw in reader:
            if not raw or (len(raw) == 1 and raw[0].strip() == ""):
                continue
            rows_read += 1
            if len(raw) <= max_idx:
                rows_dropped += 1
                continue
            values = []
            ok = True
            for spec in specs:
                cell = raw[col_idx[spec.name]].strip()
                if spec.kind == "categorical":
                    if cell == "":
                        ok = False
                        break
                    values.append(cell)
                else:
                    v = _parse_float(cell)
                    if v is None:
                        ok = False
                        break
                    values.append(v)
            if ok:
                rows.append(values)
            else:
                rows_dropped += 1
    return rows, rows_read, rows_dropped


def _apply_transform(spec: ColumnSpec, col: np.ndarray) -> np.ndarray:
    if spec.transform == "log":
        if col.size and np.min(col) <= 0.0:
            raise DataError(f"log transform on {spec.name!r} requires strictly positive values")
        return np.log(col)
    return col


def ingest(path: str, specs: list[ColumnSpec], levels: dict[str, tuple[str, ...]] | None = None,
           require_target: bool = True):
    """Core CSV ingestion shared by training and scoring paths.

    Returns ``(features, response, feature_names, report)``. ``response`` is
    None when no target spec is given (scoring inputs). When ``levels`` is
    provided, categorical columns are encoded against those known levels and
    rows showing unseen levels get an all-zero indicator block (counted in
    the report); otherwise levels are discovered from the file and sorted.
    """
    specs = list(specs)
    targets = [s for s in specs if s.kind == "target"]
    if require_target and len(targets) != 1:
        raise DataError(f"exactly one target column required, got {len(targets)}")
    if not require_target and len(targets) > 1:
        raise DataError(f"at most one target column allowed, got {len(targets)}")

    rows, rows_read, rows_dropped = _read_rows(path, specs)
    report = IngestionReport(path=path, rows_read=rows_read, rows_dropped=rows_dropped)

    n = len(rows)
    columns = {spec.name: [r[i] for r in rows] for i, spec in enumerate(specs)}

    feature_blocks: list[np.ndarray] = []
    feature_names: list[str] = []
    unseen_rows = np.zeros(n, dtype=bool)
    for spec in specs:
        if spec.kind == "target":
            continue
        if spec.kind == "numeric":
            col = _apply_transform(spec, np.asarray(columns[spec.name], dtype=np.float64))
            feature_blocks.append(col.reshape(n, 1) if n else np.empty((0, 1)))
            feature_names.append(spec.name)
        else:
            observed = columns[spec.name]
            if levels is not None and spec.name in levels:
                lv = tuple(levels[spec.name])
            else:
                lv = tuple(sorted(set(observed)))
            if not lv and n:
                raise DataError(f"categorical column {spec.name!r} has no levels")
            block = np.zeros((n, len(lv)), dtype=np.float64)
            pos = {name: j for j, name in enumerate(lv)}
            for i, val in enumerate(observed):
                j = pos.get(val)
                if j is None:
                    unseen_rows[i] = True
                else:
                    block[i, j] = 1.0
            feature_blocks.append(block)
            feature_names.extend(f"{spec.name}={name}" for name in lv)
            report.encodings[spec.name] = lv

    features = np.hstack(feature_blocks) if feature_blocks else np.empty((n, 0))
    response = None
    if targets:
        response = _apply_transform(targets[0], np.asarray(columns[targets[0].name], dtype=np.float64))

    report.unseen_category_rows = int(unseen_rows.sum())
    report.n_rows = n
    report.n_features = features.shape[1]
    return features, response, feature_names, report


def load_csv(path: str, specs: list[ColumnSpec]) -> tuple[Dataset, IngestionReport]:
    """Load a CSV file into a Dataset per the column specs.

    Categorical columns are one-hot encoded (levels sorted for determinism),
    the target is extracted and transformed per its spec, and rows with
    missing or unparseable cells are dropped. The report carries the drop
    count and encoding summary.
    """
    features, response, names, report = ingest(path, specs, require_target=True)
    return Dataset(features, response, tuple(names)), report


def write_csv(data: Dataset, path: str, target_name: str = "target") -> None:
    """Write a Dataset back to CSV at full double precision.

    Values are formatted with `repr`, so reloading the file reproduces every
    finite double bit-for-bit.
    """
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + [target_name])
        for i in range(data.n_rows):
            writer.writerow([repr(float(v)) for v in data.features[i]] + [repr(float(data.response[i]))])


def train_test_split(data: Dataset, train_fraction: float, seed: int) -> SplitPair:
    """Deterministic uniform random split; |train| = round(fraction * N)."""
    n = data.n_rows
    if n < 2:
        raise DataError("need at least 2 rows to split")
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"train_fraction={train_fraction} produces an empty train or test set for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPair(train=data.take(perm[:n_train]), test=data.take(perm[n_train:]), seed=seed)


@dataclass(frozen=True)
class Scaler:
    """Per-feature mean/std estimated on training data only.

    A zero-variance feature is passed through unchanged (its std is treated
    as 1 when transforming). The response is never scaled.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, features: np.ndarray) -> "Scaler":
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[0] == 0:
            raise DataError("cannot fit a scaler on an empty matrix")
        return cls(mean=feats.mean(axis=0), std=feats.std(axis=0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        safe_std = np.where(self.std == 0.0, 1.0, self.std)
        return (feats - self.mean) / safe_std


def standardize_fit(train: Dataset) -> Scaler:
    """Fit a Scaler on the training features."""
    return Scaler.fit(train.features)


def standardize_apply(scaler: Scaler, data: Dataset) -> Dataset:
    """Apply a fitted Scaler to a Dataset's features; response untouched."""
    return Dataset(scaler.transform(data.features), data.response, data.feature_names)
