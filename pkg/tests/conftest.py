import numpy as np
import pytest

from otdd.dataset import LabeledDataset


def random_dataset(rng, n, d, k, spread=1.0, offset=2.0):
    """Random labeled dataset in which every class appears at least once."""
    k = min(k, n)
    y = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(y)
    centers = offset * rng.normal(size=(k, d))
    X = centers[y] + spread * rng.normal(size=(n, d))
    return LabeledDataset(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
