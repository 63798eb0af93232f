"""Labeled datasets as uniform (or weighted) empirical measures over X x Y.

A :class:`LabeledDataset` holds an ``(n, d)`` feature matrix, integer class
ids in ``0..k-1`` assigned by first appearance, display names for the classes
and the sample weights of the empirical measure.  Instances are immutable:
the arrays are flagged read-only at construction.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

MAGIC = b"OTDDSET1"
_HEADER = struct.Struct("<8sQQQ")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    weights: np.ndarray

    def __init__(self, features, labels, label_names=None, weights=None):
        X = np.array(features, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {X.shape}")
        n = X.shape[0]
        if n == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise DataError(f"non-finite feature value in row {bad}")

        y = np.array(labels, copy=True)
        if y.shape != (n,):
            raise DataError(f"expected {n} labels, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            raise DataError("labels must be integer class ids")
        y = y.astype(np.int64)
        if y.min() < 0:
            raise DataError("negative class id")
        k = int(y.max()) + 1 if label_names is None else len(label_names)
        if label_names is None:
            label_names = tuple(str(i) for i in range(k))
        label_names = tuple(str(s) for s in label_names)
        if y.max() >= k:
            raise DataError(f"label id {int(y.max())} >= number of classes {k}")
        counts = np.bincount(y, minlength=k)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise DataError(f"class {missing} ({label_names[missing]!r}) has no rows")

        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=np.float64, copy=True)
            if w.shape != (n,):
                raise DataError(f"expected {n} weights, got shape {w.shape}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise DataError("weights must be finite and strictly positive")
            if abs(w.sum() - 1.0) > 1e-12:
                raise DataError(f"weights sum to {w.sum()!r}, expected 1")

        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "label_names", label_names)
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return len(self.label_names)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def take(self, rows: Sequence[int]) -> "LabeledDataset":
        """Restrict to ``rows``, compacting class ids and re-uniformizing weights.

        Classes that lose all their rows are dropped; surviving classes keep
        their relative order.
        """
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise DataError("empty selection")
        y = self.labels[rows]
        present = np.flatnonzero(np.bincount(y, minlength=self.k))
        remap = np.full(self.k, -1, dtype=np.int64)
        remap[present] = np.arange(present.size)
        names = tuple(self.label_names[i] for i in present)
        return LabeledDataset(self.features[rows], remap[y], names)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.label_names == other.label_names
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def __repr__(self):
        return f"LabeledDataset(n={self.n}, d={self.d}, k={self.k})"


@dataclass(frozen=True)
class ClassIndex:
    """Row indices of each class, ascending within a group."""

    groups: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.groups)

    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=np.int64)


def class_partition(ds: LabeledDataset) -> ClassIndex:
    order = np.argsort(ds.labels, kind="stable")
    bounds = np.cumsum(ds.class_sizes())[:-1]
    return ClassIndex(tuple(_readonly(g) for g in np.split(order, bounds)))


# -- CSV ---------------------------------------------------------------------


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: int | str = -1, has_header: bool | None = None) -> LabeledDataset:
    """Read a comma-separated file with one label column.

    ``label_column`` is a header name or a 0-based index (negative indices
    count from the end).  ``has_header=None`` treats the first row as a header
    when any of its feature cells is not numeric.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty dataset")

    width = len(rows[0])
    header = None
    if isinstance(label_column, str):
        if has_header is False:
            raise DataError("a named label column requires a header row")
        header = [c.strip() for c in rows[0]]
        if label_column not in header:
            raise DataError(f"{path}: no column named {label_column!r}")
        col = header.index(label_column)
        rows = rows[1:]
    else:
        col = int(label_column)
        if not -width <= col < width:
            raise DataError(f"{path}: label column {col} out of range for {width} columns")
        col %= width
        if has_header is None:
            has_header = not all(_is_float(c) for i, c in enumerate(rows[0]) if i != col)
        if has_header:
            rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: empty dataset")

    first_line = 2 if header is not None or has_header else 1
    feats = np.empty((len(rows), width - 1))
    names: dict[str, int] = {}
    labels = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        line = r + first_line
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        lab = row[col].strip()
        if not lab:
            raise DataError(f"{path}: row {line} has an empty label")
        labels[r] = names.setdefault(lab, len(names))
        j = 0
        for c, cell in enumerate(row):
            if c == col:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line}, column {c}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {c}: non-finite value {cell!r}")
            feats[r, j] = v
            j += 1
    return LabeledDataset(feats, labels, tuple(names))


def save_csv(ds: LabeledDataset, path, header: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(ds.d)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [ds.label_names[y]])


# -- binary ------------------------------------------------------------------


def save_binary(ds: LabeledDataset, path) -> None:
    """Write the ``OTDDSET1`` layout (all integers and floats little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, ds.n, ds.d, ds.k))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())
        for name in ds.label_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(ds.weights.astype("<f8").tobytes())


def load_binary(path) -> LabeledDataset:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: bad magic {buf[:8]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    _, n, d, k = _HEADER.unpack_from(buf)
    pos = _HEADER.size

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise DataError(f"{path}: truncated payload while reading {what}")
        out = buf[pos : pos + nbytes]
        pos += nbytes
        return out

    feats = np.frombuffer(take(8 * n * d, "features"), dtype="<f8").reshape(n, d)
    labels = np.frombuffer(take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    if n and labels.max() >= k:
        raise DataError(f"{path}: label id {int(labels.max())} >= declared k={k}")
    names = []
    for _ in range(k):
        (length,) = struct.unpack("<I", take(4, "label names"))
        names.append(take(length, "label names").decode("utf-8"))
    weights = np.frombuffer(take(8 * n, "weights"), dtype="<f8")
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return LabeledDataset(feats, labels, tuple(names), weights)


def load_dataset(path, label_column: int | str = -1, has_header: bool | None = None) -> LabeledDataset:
    """Dispatch on content: ``OTDDSET1`` magic means binary, anything else CSV."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if head == MAGIC:
        return load_binary(path)
    return load_csv(path, label_column=label_column, has_header=has_header)


# -- subsampling -------------------------------------------------------------


def stratified_counts(sizes: Sequence[int], n_target: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n_target`` rows over classes.

    Every class gets at least one row and at most its size.  Ties go to the
    lower class id.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(sizes.sum())
    quota = n_target * sizes / total
    counts = np.clip(np.floor(quota).astype(np.int64), 1, sizes)
    ids = np.arange(sizes.size)
    while counts.sum() < n_target:
        rem = np.where(counts < sizes, quota - counts, -np.inf)
        counts[np.lexsort((ids, -rem))[0]] += 1
    while counts.sum() > n_target:
        over = np.where(counts > 1, counts - quota, -np.inf)
        counts[np.lexsort((ids, -over))[0]] -= 1
    return counts


def subsample(ds: LabeledDataset, n_target: int, seed: int, stratified: bool = True) -> LabeledDataset:
    """Draw ``n_target`` rows without replacement, deterministically in ``seed``.

    Selected rows keep their original order.  Non-stratified draws may drop
    classes entirely; the survivors are renumbered.
    """
    if n_target <= 0:
        raise DataError("n_target must be positive")
    if n_target > ds.n:
        raise DataError(f"n_target={n_target} exceeds dataset size {ds.n}")
    if stratified and n_target < ds.k:
        raise DataError(f"stratified subsample of {n_target} rows cannot cover {ds.k} classes")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    if not stratified:
        rows = rng.choice(ds.n, size=n_target, replace=False)
    else:
        groups = class_partition(ds).groups
        counts = stratified_counts([g.size for g in groups], n_target)
        rows = np.concatenate([rng.choice(g, size=c, replace=False) for g, c in zip(groups, counts)])
    return ds.take(np.sort(rows))
