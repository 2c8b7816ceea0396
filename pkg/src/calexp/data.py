"""Tabular datasets: schema, CSV ingestion, stratified splitting and synthetic data."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "CATEGORICAL",
    "NUMERIC",
    "Feature",
    "FeatureSchema",
    "Dataset",
    "SplitPair",
    "Fold",
    "DataError",
    "load_csv",
    "write_csv",
    "train_cal_split",
    "stratified_kfold",
    "synth_two_class",
]

CATEGORICAL = "categorical"
NUMERIC = "numeric"


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.values:
                raise DataError(f"categorical feature {self.name!r} has no values")
            if len(set(self.values)) != len(self.values):
                raise DataError(f"categorical feature {self.name!r} has duplicate values")
        elif self.values:
            raise DataError(f"numeric feature {self.name!r} cannot carry category values")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i: int) -> Feature:
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.features], dtype=bool)

    def validate_rows(self, X: np.ndarray) -> None:
        """Raise :class:`DataError` unless every row of ``X`` conforms to the schema."""
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise DataError(f"expected {len(self.features)} feature columns, got shape {X.shape}")
        for j, f in enumerate(self.features):
            col = X[:, j]
            if f.is_categorical:
                ok = (col == np.floor(col)) & (col >= 0) & (col < len(f.values))
                if not np.all(ok):
                    bad = int(np.flatnonzero(~ok)[0])
                    raise DataError(f"row {bad}: invalid category index {col[bad]!r} for {f.name!r}")
            elif not np.all(np.isfinite(col)):
                bad = int(np.flatnonzero(~np.isfinite(col))[0])
                raise DataError(f"row {bad}: non-finite value for {f.name!r}")

    def to_dict(self) -> list[dict]:
        return [{"name": f.name, "kind": f.kind, **({"values": list(f.values)} if f.values else {})}
                for f in self.features]

    @classmethod
    def from_dict(cls, entries: Sequence[dict]) -> "FeatureSchema":
        return cls(tuple(Feature(e["name"], e["kind"], tuple(e.get("values", ()))) for e in entries))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled table. Categorical cells hold the index into the feature's value list."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    label_names: tuple[str, str] = ("0", "1")
    name: str = "data"

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1 and len(self.schema) == 0:
            X = X.reshape(-1, 0)
        y = np.array(self.y, copy=True)
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        if y.size and not np.all(np.isin(y, (0, 1))):
            raise DataError("labels must be 0 or 1")
        self.schema.validate_rows(X)
        X.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return len(self.schema)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.schema == other.schema and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    __hash__ = None

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.schema, self.X[index], self.y[index], self.label_names, self.name)

    def class_counts(self) -> tuple[int, int]:
        ones = int(self.y.sum())
        return self.n - ones, ones

    def fingerprint(self) -> str:
        """Short content hash used to tag explanations with the calibration set they came from."""
        h = hashlib.sha256()
        h.update(repr(self.schema.to_dict()).encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]

    def decode(self, row) -> list:
        """Human-readable values of a feature row (category labels instead of indices)."""
        return [f.values[int(v)] if f.is_categorical else float(v) for f, v in zip(self.schema, row)]


class SplitPair(NamedTuple):
    proper_training: Dataset
    calibration: Dataset
    seed: int
    proper_index: np.ndarray
    calibration_index: np.ndarray


class Fold(NamedTuple):
    repeat: int
    fold: int
    train: Dataset
    test: Dataset
    train_index: np.ndarray
    test_index: np.ndarray


def _parse_real(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, label_column: str, declared_schema: FeatureSchema | None = None, *,
             categorical: Sequence[str] = (), label_order: Sequence[str] | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Columns whose every cell parses as a finite real are numeric unless listed
    in ``categorical``; the rest become categorical with values indexed in
    order of first appearance. The two raw label values map to 0 and 1 in
    lexicographic order, or in the order given by ``label_order``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty dataset: missing header row")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not found in header")
    if not body:
        raise DataError("empty dataset")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"row {i + 1}: expected {len(header)} cells, got {len(r)}")
        for j, cell in enumerate(r):
            if cell.strip() == "":
                raise DataError(f"row {i + 1}, column {header[j]!r}: missing value")

    li = header.index(label_column)
    raw_labels = [r[li].strip() for r in body]
    distinct = sorted(set(raw_labels))
    if label_order is not None:
        label_order = [str(v) for v in label_order]
        if len(label_order) != 2 or set(label_order) != set(distinct):
            raise DataError(f"label_order {label_order} does not match label values {distinct}")
        distinct = label_order
    if len(distinct) != 2:
        raise DataError(f"label column must hold exactly two distinct values, found {len(distinct)}")
    y = np.array([distinct.index(v) for v in raw_labels], dtype=np.int64)

    feat_cols = [j for j in range(len(header)) if j != li]
    if declared_schema is not None:
        names = [header[j] for j in feat_cols]
        if declared_schema.names != names:
            raise DataError(f"declared schema {declared_schema.names} does not match columns {names}")
    unknown = set(categorical) - {header[j] for j in feat_cols}
    if unknown:
        raise DataError(f"unknown categorical columns: {sorted(unknown)}")

    features = []
    X = np.empty((len(body), len(feat_cols)), dtype=float)
    for k, j in enumerate(feat_cols):
        name = header[j]
        cells = [r[j].strip() for r in body]
        if declared_schema is not None:
            feat = declared_schema[k]
        elif name in categorical:
            feat = None
        else:
            feat = Feature(name, NUMERIC) if all(_parse_real(c) is not None for c in cells) else None
        if feat is None:
            values = list(dict.fromkeys(cells))
            feat = Feature(name, CATEGORICAL, tuple(values))
        if feat.is_categorical:
            lookup = {v: i for i, v in enumerate(feat.values)}
            for i, c in enumerate(cells):
                if c not in lookup:
                    raise DataError(f"row {i + 1}, column {name!r}: unknown category {c!r}")
                X[i, k] = lookup[c]
        else:
            for i, c in enumerate(cells):
                v = _parse_real(c)
                if v is None:
                    raise DataError(f"row {i + 1}, column {name!r}: cannot parse {c!r} as a number")
                X[i, k] = v
        features.append(feat)
    return Dataset(FeatureSchema(tuple(features)), X, y, (distinct[0], distinct[1]), path.stem)


def write_csv(data: Dataset, path, label_column: str = "label") -> None:
    """Write ``data`` so that :func:`load_csv` with the same schema reproduces it exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.schema.names + [label_column])
        for row, label in zip(data.X, data.y):
            cells = [f.values[int(v)] if f.is_categorical else repr(float(v))
                     for f, v in zip(data.schema, row)]
            w.writerow(cells + [data.label_names[int(label)]])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_cal_split(data: Dataset, cal_fraction: float = 1 / 3, seed: int = 0) -> SplitPair:
    """Stratified split into a proper training set and a calibration set.

    The calibration size is ``round(cal_fraction * n)`` shared out between the
    classes by largest remainder; each class keeps at least one member on
    both sides.
    """
    if not 0.0 < cal_fraction < 1.0:
        raise DataError("cal_fraction must lie in (0, 1)")
    if data.n < 4:
        raise DataError("need at least 4 instances to split")
    classes = [np.flatnonzero(data.y == c) for c in (0, 1)]
    for c, idx in enumerate(classes):
        if idx.size < 2:
            raise DataError(f"class {c} has {idx.size} instance(s); cannot appear in both parts")

    total = _round_half_up(cal_fraction * data.n)
    exact = [cal_fraction * idx.size for idx in classes]
    alloc = [int(math.floor(e)) for e in exact]
    order = sorted(range(2), key=lambda c: (-(exact[c] - alloc[c]), c))
    for c in order[: max(total - sum(alloc), 0)]:
        alloc[c] += 1
    alloc = [min(max(a, 1), idx.size - 1) for a, idx in zip(alloc, classes)]

    rng = np.random.default_rng(seed)
    cal, proper = [], []
    for a, idx in zip(alloc, classes):
        perm = rng.permutation(idx)
        cal.append(perm[:a])
        proper.append(perm[a:])
    cal_idx = np.sort(np.concatenate(cal))
    proper_idx = np.sort(np.concatenate(proper))
    return SplitPair(data.subset(proper_idx), data.subset(cal_idx), seed, proper_idx, cal_idx)


def stratified_kfold(data: Dataset, k: int = 10, repeats: int = 1, seed: int = 0) -> list[Fold]:
    """Repeated stratified k-fold partitions.

    Within a repeat each class is shuffled and dealt round-robin over the
    folds, continuing the deal across classes so fold sizes differ by at most
    one.
    """
    if k < 2:
        raise DataError("k must be at least 2")
    if repeats < 1:
        raise DataError("repeats must be at least 1")
    classes = [np.flatnonzero(data.y == c) for c in (0, 1)]
    for c, idx in enumerate(classes):
        if idx.size < k:
            raise DataError(f"class {c} has {idx.size} instances, fewer than k={k}")
    rng = np.random.default_rng(seed)
    folds = []
    all_idx = np.arange(data.n)
    for r in range(repeats):
        dealt = np.concatenate([rng.permutation(idx) for idx in classes])
        assignment = np.empty(data.n, dtype=np.int64)
        assignment[dealt] = np.arange(data.n) % k
        for f in range(k):
            test = all_idx[assignment == f]
            train = all_idx[assignment != f]
            folds.append(Fold(r, f, data.subset(train), data.subset(test), train, test))
    return folds


def synth_two_class(n: int, separation: float = 1.0, seed: int = 0) -> Dataset:
    """Synthetic mixed-type binary problem.

    Four numeric and two categorical features; class-conditional shifts scale
    with ``separation`` (0 gives features independent of the label). Labels
    are balanced to within one instance.
    """
    if n < 20:
        raise DataError("synth_two_class needs n >= 20")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % 2)
    sign = 2.0 * y - 1.0
    X = np.empty((n, 6), dtype=float)
    X[:, 0] = rng.normal(0.0, 1.0, n) + 0.9 * separation * sign
    X[:, 1] = rng.normal(0.0, 1.0, n) + 0.5 * separation * sign
    X[:, 2] = rng.normal(0.0, 1.0, n)
    X[:, 3] = np.round(rng.uniform(0.0, 10.0, n) + 1.5 * separation * (y - 0.5), 1)
    for col, k, strength in ((4, 3, 1.0), (5, 4, 0.4)):
        logits = strength * separation * np.outer(sign, np.linspace(1.0, -1.0, k))
        prob = np.exp(logits)
        prob /= prob.sum(axis=1, keepdims=True)
        u = rng.random(n)[:, None]
        X[:, col] = np.minimum((u > np.cumsum(prob, axis=1)).sum(axis=1), k - 1)
    schema = FeatureSchema((
        Feature("x0", NUMERIC),
        Feature("x1", NUMERIC),
        Feature("noise", NUMERIC),
        Feature("level", NUMERIC),
        Feature("colour", CATEGORICAL, ("red", "green", "blue")),
        Feature("size", CATEGORICAL, ("S", "M", "L", "XL")),
    ))
    return Dataset(schema, X, y, ("0", "1"), f"synth{n}")
