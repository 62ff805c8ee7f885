"""Tabular dataset ingestion, target/outlier binarization and stratified splits."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import (
    DegenerateSplitError,
    InsufficientDataError,
    MalformedInputError,
    SchemaError,
)

TARGET = "target"
OUTLIER = "outlier"


@dataclass(frozen=True)
class Standardizer:
    """Column-wise z-score statistics; zero-variance columns keep divisor 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        scale = np.where(std > 0, std, 1.0)
        return cls(mean=mean, scale=scale)

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.mean.shape[0]:
            raise SchemaError(
                f"expected {self.mean.shape[0]} feature columns, got {X.shape[-1] if X.ndim else 0}"
            )
        return (X - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float), scale=np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple
    feature_names: tuple = ()
    standardizer: Standardizer = None

    def __post_init__(self):
        X = self.features
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise SchemaError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise MalformedInputError("non-finite feature value")
        if self.labels.shape != (X.shape[0],):
            raise SchemaError("labels length must equal the number of rows")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise SchemaError("label index outside class_names")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def class_index(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise SchemaError(
                f"unknown class {name!r}; known classes: {', '.join(self.class_names)}"
            ) from None


@dataclass(frozen=True)
class OneClassDataset:
    base: LabeledDataset
    positive_class: int
    binary_labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = self.base.labels == self.positive_class
        if not np.array_equal(self.binary_labels, expected):
            raise SchemaError("binary_labels inconsistent with positive_class")
        if not expected.any():
            raise SchemaError("dataset has no target rows")

    @property
    def features(self):
        return self.base.features

    @property
    def positive_name(self):
        return self.base.class_names[self.positive_class]

    @property
    def is_target(self):
        """Boolean mask, True for target rows."""
        return self.binary_labels


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    partition_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise SchemaError("train_fraction must lie in (0, 1)")
        if self.partition_count < 1:
            raise SchemaError("partition_count must be positive")
        if self.seed < 0:
            raise SchemaError("seed must be non-negative")


def _parse_float(text):
    try:
        value = float(text)
    except ValueError:
        return None
    return value


def load_csv(path, label_column, standardize=False):
    """Read a comma-separated file into a :class:`LabeledDataset`.

    The first row is treated as a header when ``label_column`` is a name, or
    when any of its feature cells fails to parse as a number.

    Parameters
    ----------
    path : str or Path
    label_column : str or int
        Column name (requires a header) or zero-based index.
    standardize : bool
        Z-score every feature column with statistics of this file. The
        statistics are attached to the dataset for reuse on query rows.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InsufficientDataError(f"{path} contains no rows")

    width = len(rows[0])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        header = [c.strip() for c in rows[0]]
        if label_column not in header:
            raise SchemaError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        body = rows[1:]
    else:
        label_idx = int(label_column)
        if label_idx < 0:
            label_idx += width
        if not 0 <= label_idx < width:
            raise SchemaError(f"label column index {label_column} out of range for {width} columns")
        first = [c for i, c in enumerate(rows[0]) if i != label_idx]
        if any(_parse_float(c) is None for c in first):
            header = [c.strip() for c in rows[0]]
            body = rows[1:]
        else:
            header = [f"x{i}" for i in range(width)]
            body = rows
    feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)

    if not body:
        raise InsufficientDataError(f"{path} has a header but no data rows")

    features = np.empty((len(body), width - 1))
    raw_labels = []
    offset = len(rows) - len(body)
    for r, row in enumerate(body):
        lineno = r + offset + 1
        if len(row) != width:
            raise MalformedInputError(f"expected {width} cells, found {len(row)}", row=lineno)
        k = 0
        for c, cell in enumerate(row):
            if c == label_idx:
                raw_labels.append(cell.strip())
                continue
            value = _parse_float(cell)
            if value is None or not math.isfinite(value):
                raise MalformedInputError(
                    f"cell {cell!r} is not a finite number", row=lineno, column=header[c]
                )
            features[r, k] = value
            k += 1

    if width - 1 < 1:
        raise SchemaError("no feature columns")

    class_names = tuple(sorted(set(raw_labels), key=raw_labels.index))
    lookup = {n: i for i, n in enumerate(class_names)}
    labels = np.array([lookup[v] for v in raw_labels], dtype=np.int64)

    standardizer = None
    if standardize:
        standardizer = Standardizer.fit(features)
        features = standardizer.apply(features)
    return LabeledDataset(features, labels, class_names, feature_names, standardizer)


def binarize_majority(ds, positive_override=None):
    """Map one class to target and every other class to outlier.

    Without an override the most frequent class wins; ties go to the lowest
    class index.
    """
    if positive_override is not None:
        positive = ds.class_index(positive_override)
    else:
        counts = np.bincount(ds.labels, minlength=len(ds.class_names))
        positive = int(np.argmax(counts))
    return OneClassDataset(ds, positive, ds.labels == positive)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(strata, train_fraction, rng):
    """One stratified split of row indices, given a per-row stratum id."""
    strata = np.asarray(strata)
    train, test = [], []
    for value in np.unique(strata):
        rows = np.flatnonzero(strata == value)
        n_train = _round_half_up(train_fraction * rows.size)
        if rows.size < 2 or n_train in (0, rows.size):
            raise DegenerateSplitError(
                f"class {value} has {rows.size} rows; cannot place it in both train and test"
            )
        perm = rng.permutation(rows)
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def make_partitions(ds, spec):
    """Stratified random train/test partitions.

    Strata are the original class labels, so multi-class datasets keep every
    class's share in both halves. Partition ``p`` draws from its own stream
    seeded by ``(spec.seed, p)``.
    """
    labels = ds.base.labels if isinstance(ds, OneClassDataset) else ds.labels
    parts = []
    for p in range(spec.partition_count):
        rng = np.random.default_rng([spec.seed, p])
        parts.append(stratified_split(labels, spec.train_fraction, rng))
    return parts


def stratified_folds(strata, n_folds, seed):
    """Assign each row to one of ``n_folds`` folds, round-robin within strata.

    Returns an integer fold id per row.
    """
    strata = np.asarray(strata)
    rng = np.random.default_rng([seed, n_folds])
    fold_of = np.empty(strata.size, dtype=np.int64)
    start = 0
    for value in np.unique(strata):
        rows = rng.permutation(np.flatnonzero(strata == value))
        fold_of[rows] = (np.arange(rows.size) + start) % n_folds
        start = (start + rows.size) % n_folds
    return fold_of


def partitions_to_json(parts, spec):
    return json.dumps(
        {
            "split": {
                "train_fraction": spec.train_fraction,
                "partition_count": spec.partition_count,
                "seed": spec.seed,
            },
            "partitions": [
                {"train": tr.tolist(), "test": te.tolist()} for tr, te in parts
            ],
        },
        indent=1,
    )


def partitions_from_json(text):
    doc = json.loads(text)
    spec = SplitSpec(**doc["split"])
    parts = [
        (np.asarray(p["train"], dtype=np.int64), np.asarray(p["test"], dtype=np.int64))
        for p in doc["partitions"]
    ]
    return parts, spec


def mean_pairwise_distance(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientDataError("mean pairwise distance needs at least 2 rows")
    return float(np.mean(pdist(X)))


def load_features(path, label_column=None):
    """Read query rows as a float matrix; zero data rows are allowed.

    A label column, if named, is dropped. The first row is a header when any
    of its cells fails to parse as a number.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        return np.empty((0, 0))
    width = len(rows[0])
    header = None
    if any(_parse_float(c) is None for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    drop = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise SchemaError(f"label column {label_column!r} not in header")
            drop = header.index(label_column)
        else:
            drop = int(label_column) % width
    keep = [c for c in range(width) if c != drop]
    out = np.empty((len(rows), len(keep)))
    offset = 1 if header is not None else 0
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MalformedInputError(f"expected {width} cells, found {len(row)}", row=r + offset + 1)
        for k, c in enumerate(keep):
            value = _parse_float(row[c])
            if value is None or not math.isfinite(value):
                raise MalformedInputError(
                    f"cell {row[c]!r} is not a finite number",
                    row=r + offset + 1,
                    column=header[c] if header else c,
                )
            out[r, k] = value
    return out
