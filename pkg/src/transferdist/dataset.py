"""Labeled tabular data for the source and target environments."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import Seed, make_rng

log = logging.getLogger(__name__)

ENVIRONMENTS = ("source", "target")


class DataError(ValueError):
    """Raised when input data violates the ingestion contract."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature rows with one integer class label each.

    ``n_classes`` is the size of the label alphabet; it defaults to
    ``max(labels) + 1`` so that labels index directly into prior vectors.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    environment: str = "source"
    n_classes: int = 0
    label_mapping: Optional[dict[int, int]] = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"labels length {y.shape} does not match {X.shape[0]} feature rows"
            )
        if X.shape[0] < 1:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(X)):
            bad = int(np.sum(~np.all(np.isfinite(X), axis=1)))
            raise DataError(f"{bad} rows contain non-finite feature values")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise DataError("label must be non-negative integer")
        n_classes = self.n_classes or int(y.max()) + 1
        if y.max() >= n_classes:
            raise DataError(f"label {int(y.max())} outside alphabet of size {n_classes}")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        if self.environment not in ENVIRONMENTS:
            raise DataError(f"environment must be one of {ENVIRONMENTS}")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "n_classes", n_classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(
            self.features[rows],
            self.labels[rows],
            self.feature_names,
            self.environment,
            self.n_classes,
            self.label_mapping,
        )

    def with_features(self, features, feature_names=()) -> "LabeledDataset":
        return LabeledDataset(
            features, self.labels, tuple(feature_names), self.environment,
            self.n_classes, self.label_mapping,
        )

    def with_environment(self, environment: str) -> "LabeledDataset":
        return LabeledDataset(
            self.features, self.labels, self.feature_names, environment,
            self.n_classes, self.label_mapping,
        )


def load_csv(
    path,
    label_column: Optional[str],
    feature_columns: Optional[Sequence[str]] = None,
    environment: str = "source",
) -> LabeledDataset:
    """Read a UTF-8 CSV with a header row.

    With ``label_column=None`` every row gets label 0 (unlabeled data).
    Feature columns default to every column except the label.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: missing label column {label_column!r}")
    if feature_columns is None:
        feature_columns = [h for h in header if h != label_column]
    for c in feature_columns:
        if c not in header:
            raise DataError(f"{path}: missing feature column {c!r}")
    if not feature_columns:
        raise DataError(f"{path}: no feature columns")
    if not rows:
        raise DataError(f"{path}: dataset is empty")

    fidx = [header.index(c) for c in feature_columns]
    lidx = header.index(label_column) if label_column is not None else None
    X = np.empty((len(rows), len(fidx)))
    y = np.zeros(len(rows), dtype=np.int64)
    nonfinite = []
    for i, row in enumerate(rows):
        line = i + 2  # header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        for j, k in enumerate(fidx):
            cell = row[k].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at line {line}, column {header[k]!r}"
                ) from None
            if not math.isfinite(v):
                nonfinite.append((line, header[k]))
            X[i, j] = v
        if lidx is not None:
            cell = row[lidx].strip()
            try:
                lab = int(cell)
            except ValueError:
                try:
                    f = float(cell)
                except ValueError:
                    f = math.nan
                if not f.is_integer():
                    raise DataError(
                        f"{path}: label must be non-negative integer, got {cell!r} at line {line}"
                    ) from None
                lab = int(f)
            if lab < 0:
                raise DataError(
                    f"{path}: label must be non-negative integer, got {cell!r} at line {line}"
                )
            y[i] = lab
    if nonfinite:
        line, col = nonfinite[0]
        raise DataError(
            f"{path}: {len(nonfinite)} non-finite feature values rejected "
            f"(first at line {line}, column {col!r})"
        )
    return LabeledDataset(X, y, tuple(feature_columns), environment)


def write_csv(ds: LabeledDataset, path, label_column: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [label_column])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def reindex_labels(*datasets: LabeledDataset) -> tuple[LabeledDataset, ...]:
    """Map the union of observed labels onto 0..|Y|-1 for all datasets jointly.

    Datasets whose labels are already contiguous come back unchanged
    (apart from a shared ``n_classes``).
    """
    observed = sorted(set().union(*(np.unique(ds.labels).tolist() for ds in datasets)))
    n_classes = len(observed)
    if observed == list(range(n_classes)):
        mapping = None
    else:
        mapping = {int(old): new for new, old in enumerate(observed)}
        log.warning("re-indexed labels: %s", mapping)
    out = []
    for ds in datasets:
        y = ds.labels if mapping is None else np.array([mapping[int(v)] for v in ds.labels])
        out.append(
            LabeledDataset(ds.features, y, ds.feature_names, ds.environment, n_classes, mapping)
        )
    return tuple(out)


def split_by_class(ds: LabeledDataset) -> dict[int, np.ndarray]:
    """Group rows by label, preserving row order within each class."""
    return {int(c): ds.features[ds.labels == c] for c in np.unique(ds.labels)}


def stratified_counts(counts: np.ndarray, m: int) -> np.ndarray:
    """Largest-remainder allocation of ``m`` rows proportional to ``counts``."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.sum()
    exact = counts * m / n
    alloc = np.floor(exact).astype(np.int64)
    short = m - alloc.sum()
    # ties go to the lower label
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[:short]:
        alloc[i] += 1
    return np.minimum(alloc, counts)


def subsample(ds: LabeledDataset, m: int, seed: Seed = 0, stratified: bool = False) -> LabeledDataset:
    """Draw ``m`` rows without replacement.

    Stratified draws keep every class's share within one row of the
    parent proportion.
    """
    if not 1 <= m <= ds.n:
        raise DataError(f"subsample size {m} outside [1, {ds.n}]")
    rng = make_rng(seed)
    if not stratified:
        rows = rng.permutation(ds.n)[:m]
        return ds.take(rows)
    counts = ds.class_counts()
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DataError(f"stratified subsample requested but classes {missing} have 0 rows")
    alloc = stratified_counts(counts, m)
    picks = []
    for c, k in enumerate(alloc):
        idx = np.flatnonzero(ds.labels == c)
        picks.append(idx[rng.permutation(idx.size)[:k]])
    rows = np.concatenate(picks)
    return ds.take(rows[rng.permutation(rows.size)])
