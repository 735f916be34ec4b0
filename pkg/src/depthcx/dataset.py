"""Dataset container, delimited-file I/O, stratified partitioning and k-fold plans."""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates its invariants or cannot be ingested."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable n x d numeric feature matrix with binary labels.

    ``features`` and ``labels`` are stored as read-only numpy arrays so the
    object can be shared between worker processes without copying semantics
    leaking out.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    _codes: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 2 or d < 1:
            raise DatasetError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if y.shape != (n,):
            raise DatasetError(f"labels must have length {n}, got shape {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise DatasetError("labels must be 0/1")
        y = y.astype(np.int8)
        if y.min() == y.max():
            raise DatasetError("both classes must be present")
        bad = np.argwhere(~np.isfinite(X))
        if len(bad):
            r, c = bad[0]
            raise DatasetError(f"non-finite value at row {r + 1}, column {c + 1}")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != d:
            raise DatasetError(f"expected {d} feature names, got {len(names)}")
        if len(set(names)) != d:
            raise DatasetError("feature names must be unique")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.labels.sum())
        return self.n - n1, n1

    def rank_codes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-feature dense rank codes, shared by the tree learner.

        Returns ``(codes, values, counts)`` where ``codes[i, j]`` indexes the
        sorted distinct values of feature ``j`` stored in ``values[j, :counts[j]]``.
        """
        if "ranks" not in self._codes:
            n, d = self.features.shape
            codes = np.empty((n, d), dtype=np.int32)
            uniques = []
            for j in range(d):
                u, inv = np.unique(self.features[:, j], return_inverse=True)
                codes[:, j] = inv
                uniques.append(u)
            counts = np.array([len(u) for u in uniques], dtype=np.int32)
            values = np.zeros((d, int(counts.max())), dtype=np.float64)
            for j, u in enumerate(uniques):
                values[j, : len(u)] = u
            for a in (codes, values, counts):
                a.setflags(write=False)
            self._codes["ranks"] = (codes, values, counts)
        return self._codes["ranks"]

    def subset_rows(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)

    def with_features(self, extra: np.ndarray, names: Sequence[str]) -> "Dataset":
        """Return a copy with ``extra`` columns appended."""
        X = np.hstack([self.features, np.asarray(extra, dtype=np.float64)])
        return Dataset(X, self.labels, self.feature_names + tuple(names))


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DatasetError(f"non-numeric value {cell!r} at row {row}, column {col!r}") from None
    if not math.isfinite(v):
        raise DatasetError(f"non-finite value {cell!r} at row {row}, column {col!r}")
    return v


def load_dataset(
    path: str | Path,
    label_column: str = "class",
    delimiter: str | None = None,
    positive_label: str | None = None,
) -> Dataset:
    """Read a delimited text file with a header row into a :class:`Dataset`.

    Raw label strings are mapped to 0/1 by lexicographic order; the larger
    one is the positive class unless ``positive_label`` names it. Row numbers
    in error messages count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab", ".txt") else ","
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        hits = [i for i, h in enumerate(header) if h == label_column]
        if not hits:
            raise DatasetError(f"{path}: label column {label_column!r} not found")
        if len(hits) > 1:
            raise DatasetError(f"{path}: label column {label_column!r} is ambiguous")
        li = hits[0]
        names = [h for i, h in enumerate(header) if i != li]
        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for rownum, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(
                    f"{path}: row {rownum} has {len(rec)} fields, expected {len(header)}"
                )
            raw_labels.append(rec[li].strip())
            rows.append(
                [_parse_float(c, rownum, header[i]) for i, c in enumerate(rec) if i != li]
            )
    classes = sorted(set(raw_labels))
    if len(classes) != 2:
        raise DatasetError(f"{path}: expected exactly two classes, found {len(classes)}: {classes[:5]}")
    if positive_label is not None:
        if positive_label not in classes:
            raise DatasetError(f"{path}: positive label {positive_label!r} not among {classes}")
        pos = positive_label
    else:
        pos = classes[1]
    y = np.array([1 if lab == pos else 0 for lab in raw_labels], dtype=np.int8)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(X, y, tuple(names))


def _fmt(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def save_dataset(data: Dataset, path: str | Path, label_column: str = "class",
                 delimiter: str | None = None) -> None:
    """Write ``data`` in the same delimited layout :func:`load_dataset` reads.

    Values are written with shortest round-trip formatting, so a save/load
    cycle reproduces the matrix exactly.
    """
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab", ".txt") else ","
    lines = [delimiter.join(list(data.feature_names) + [label_column])]
    for row, lab in zip(data.features, data.labels):
        lines.append(delimiter.join([_fmt(float(v)) for v in row] + [str(int(lab))]))
    path.write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Partition:
    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    validation_idx: tuple[int, ...]

    @property
    def visible_idx(self) -> tuple[int, ...]:
        """Rows the feature selector may see (train and test)."""
        return tuple(sorted(self.train_idx + self.test_idx))

    def to_json(self) -> str:
        return json.dumps({"train": list(self.train_idx), "test": list(self.test_idx),
                           "validation": list(self.validation_idx)})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        obj = json.loads(text)
        return cls(tuple(obj["train"]), tuple(obj["test"]), tuple(obj["validation"]))


# One period of a balanced 3:1:1 word; any window holds each part within one row of its share.
_SPLIT_PATTERN = (0, 1, 0, 2, 0)


def split_partition(data: Dataset, seed: int) -> Partition:
    """Stratified 60/20/20 train/test/validation split.

    Class members are shuffled with a seeded RNG and dealt out along a
    periodic train/test/train/validation/train pattern, which keeps both
    per-class and total part sizes within one row of the target ratios.
    """
    rng = random.Random(seed)
    parts: list[list[int]] = [[], [], []]
    pos = 0
    for c in (0, 1):
        members = [int(i) for i in np.flatnonzero(data.labels == c)]
        if len(members) < 5:
            raise DatasetError(f"class {c} has {len(members)} rows; stratified 60/20/20 needs >= 5")
        rng.shuffle(members)
        for i in members:
            parts[_SPLIT_PATTERN[pos % 5]].append(i)
            pos += 1
    return Partition(*(tuple(sorted(p)) for p in parts))


@dataclass(frozen=True)
class FoldPlan:
    indices: tuple[int, ...]
    assignments: tuple[int, ...]
    k: int

    def folds(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(train, held-out) index arrays for every fold."""
        idx = np.asarray(self.indices, dtype=np.int64)
        a = np.asarray(self.assignments)
        return [(idx[a != f], idx[a == f]) for f in range(self.k)]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "indices": list(self.indices),
                           "assignments": list(self.assignments)})


def stratified_kfold(indices: Sequence[int], labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    """Assign ``indices`` to ``k`` stratified folds.

    The index set is sorted first, so the plan depends only on the set and
    the seed. Within each class members are shuffled and dealt round-robin,
    continuing the deal position across classes to balance fold sizes.
    """
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    idx = sorted(int(i) for i in indices)
    labels = np.asarray(labels)
    rng = random.Random(seed)
    fold_of: dict[int, int] = {}
    pos = 0
    for c in (0, 1):
        members = [i for i in idx if labels[i] == c]
        if len(members) < k:
            raise DatasetError(f"class {c} has {len(members)} members, fewer than k={k}")
        rng.shuffle(members)
        for i in members:
            fold_of[i] = pos % k
            pos += 1
    return FoldPlan(tuple(idx), tuple(fold_of[i] for i in idx), k)
