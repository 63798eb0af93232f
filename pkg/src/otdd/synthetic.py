"""Synthetic labeled datasets for tests, benchmarks and demonstrations."""
from __future__ import annotations

import numpy as np

from .dataset import LabeledDataset


def gaussian_classes(
    n: int,
    d: int,
    k: int,
    seed: int = 0,
    separation: float = 4.0,
    spread: float = 1.0,
    centers: np.ndarray | None = None,
    shift: float | np.ndarray = 0.0,
) -> LabeledDataset:
    """``n`` points split as evenly as possible over ``k`` Gaussian classes.

    Class centers are drawn once from ``seed`` (scaled by ``separation``)
    unless given; each class has a random anisotropic covariance with
    typical standard deviation ``spread``.  ``shift`` translates every point.
    """
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = separation * rng.normal(size=(k, d))
    labels = np.arange(n) % k
    X = np.empty((n, d))
    for y in range(k):
        rows = labels == y
        A = spread * rng.normal(size=(d, d)) / np.sqrt(d)
        X[rows] = centers[y] + rng.normal(size=(rows.sum(), d)) @ A.T
    return LabeledDataset(X + shift, labels)


def label_flip_triplet(points_per_cluster: int = 20, gap: float = 10.0, offset: float = 3.0, jitter: float = 0.5, seed: int = 7):
    """Three 1-D datasets where label information reverses a distance ordering.

    ``ref`` has two clusters, at 0 (label ``a``) and at ``gap`` (label ``b``).
    ``pair1`` is the same two clusters moved right by ``offset``, labels
    intact.  ``pair2`` keeps the exact feature positions of ``ref`` but each
    cluster mixes both of its labels half and half.  Feature-only OT puts
    ``pair2`` at distance zero from ``ref``; with labels, ``pair1`` is closer.
    """
    rng = np.random.default_rng(seed)
    base = jitter * rng.standard_normal(points_per_cluster)
    x = np.concatenate([base, gap + base])
    y = np.repeat([0, 1], points_per_cluster)
    ref = LabeledDataset(x[:, None], y, ("a", "b"))
    pair1 = LabeledDataset(x[:, None] + offset, y, ("c", "d"))
    mixed = np.tile([0, 1], points_per_cluster)
    pair2 = LabeledDataset(x[:, None], mixed, ("e", "f"))
    return ref, pair1, pair2


def shared_class_pair(k: int = 5, per_class: int = 30, d: int = 2, separation: float = 12.0, seed: int = 0):
    """Two datasets over the same ``k`` well separated classes, drawn independently.

    Class ``y`` of the first dataset corresponds to class ``y`` of the second.
    The second dataset is slightly translated and rescaled.
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(k) / k
    centers = np.zeros((k, d))
    centers[:, 0] = separation * np.cos(angles)
    centers[:, 1] = separation * np.sin(angles)
    y = np.repeat(np.arange(k), per_class)
    XA = centers[y] + rng.normal(size=(y.size, d))
    XB = 1.1 * (centers[y] + rng.normal(size=(y.size, d))) + 0.5
    return LabeledDataset(XA, y), LabeledDataset(XB, y)
