"""Per-class means and covariances from a two-pass batched scan.

The first pass accumulates the class mean one batch at a time; the second
pass accumulates the centered scatter ``sum (x - mu)(x - mu)^T`` against that
mean.  Only one ``(batch_size, d)`` slice and the ``d x d`` accumulator are
live at once, so memory does not grow with the class size.  Covariances use
population (``1/n_y``) normalization.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, class_partition
from .errors import DataError

MOMENT_MAGIC = b"OTDDMOM1"
DEFAULT_BATCH = 4096


@dataclass(frozen=True, eq=False)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    count: int
    regularizer: float = 0.0

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def diagonal(self) -> "MomentSummary":
        """Same moments with the off-diagonal covariance entries dropped."""
        return MomentSummary(self.mean, np.diag(np.diag(self.covariance)), self.count, self.regularizer)

    def without_covariance(self) -> "MomentSummary":
        return MomentSummary(self.mean, np.zeros_like(self.covariance), self.count, 0.0)


def _scan(X: np.ndarray, rows: np.ndarray, batch_size: int):
    n = rows.size
    d = X.shape[1]
    total = np.zeros(d)
    for s in range(0, n, batch_size):
        total += X[rows[s : s + batch_size]].sum(axis=0)
    mean = total / n
    scatter = np.zeros((d, d))
    for s in range(0, n, batch_size):
        B = X[rows[s : s + batch_size]] - mean
        scatter += B.T @ B
    cov = scatter / n
    # the accumulated scatter is symmetric up to BLAS round-off
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _summary(X, rows, batch_size, reg):
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if reg < 0:
        raise DataError("regularizer must be nonnegative")
    mean, cov = _scan(X, rows, batch_size)
    if rows.size == 1:
        cov[:] = 0.0
    if reg:
        cov[np.diag_indices_from(cov)] += reg
    return MomentSummary(mean, cov, int(rows.size), float(reg))


def class_moments(ds: LabeledDataset, class_id: int, batch_size: int = DEFAULT_BATCH, reg: float = 0.0) -> MomentSummary:
    if not 0 <= class_id < ds.k:
        raise DataError(f"unknown class id {class_id} (dataset has {ds.k} classes)")
    rows = np.flatnonzero(ds.labels == class_id)
    return _summary(ds.features, rows, batch_size, reg)


def all_moments(
    ds: LabeledDataset,
    batch_size: int = DEFAULT_BATCH,
    reg: float = 0.0,
    threads: int = 1,
) -> dict[int, MomentSummary]:
    groups = class_partition(ds).groups
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(lambda g: _summary(ds.features, g, batch_size, reg), groups))
    else:
        out = [_summary(ds.features, g, batch_size, reg) for g in groups]
    return dict(enumerate(out))


def feature_scale(moments: dict[int, MomentSummary]) -> float:
    """Mean diagonal entry of the unregularized class covariances."""
    diags = [np.mean(np.diag(m.covariance)) - m.regularizer for m in moments.values()]
    return float(np.mean(diags)) if diags else 0.0


def regularize(moments: dict[int, MomentSummary], reg: float) -> dict[int, MomentSummary]:
    """Replace whatever ridge was applied with ``reg`` times the identity."""
    out = {}
    for y, m in moments.items():
        cov = m.covariance.copy()
        cov[np.diag_indices_from(cov)] += reg - m.regularizer
        out[y] = MomentSummary(m.mean, cov, m.count, float(reg))
    return out


def naive_moments(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-memory mean and population covariance; used as a test oracle."""
    mu = X.mean(axis=0)
    Xc = X - mu
    return mu, Xc.T @ Xc / X.shape[0]


# -- cache file --------------------------------------------------------------
# OTDDMOM1 | u64 k | u64 d | k x (u32 class id, u64 count, f64 reg, d f64 mean, d*d f64 cov)


def save_moments(moments: dict[int, MomentSummary], path) -> None:
    d = next(iter(moments.values())).d if moments else 0
    with open(path, "wb") as fh:
        fh.write(MOMENT_MAGIC + struct.pack("<QQ", len(moments), d))
        for y in sorted(moments):
            m = moments[y]
            fh.write(struct.pack("<IQd", y, m.count, m.regularizer))
            fh.write(m.mean.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(m.covariance, dtype="<f8").tobytes())


def load_moments(path) -> dict[int, MomentSummary]:
    buf = Path(path).read_bytes()
    if buf[:8] != MOMENT_MAGIC:
        raise DataError(f"{path}: bad magic {buf[:8]!r}, expected {MOMENT_MAGIC!r}")
    k, d = struct.unpack_from("<QQ", buf, 8)
    pos = 24
    rec = struct.calcsize("<IQd") + 8 * (d + d * d)
    if len(buf) != pos + k * rec:
        raise DataError(f"{path}: expected {pos + k * rec} bytes, found {len(buf)}")
    out = {}
    for _ in range(k):
        y, count, reg = struct.unpack_from("<IQd", buf, pos)
        pos += struct.calcsize("<IQd")
        mean = np.frombuffer(buf, "<f8", d, pos).copy()
        pos += 8 * d
        cov = np.frombuffer(buf, "<f8", d * d, pos).reshape(d, d).copy()
        pos += 8 * d * d
        out[y] = MomentSummary(mean, cov, count, reg)
    return out
