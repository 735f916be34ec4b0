import numpy as np
import pytest

from depthcx.dataset import Dataset


def make_dataset(X, y, prefix="f"):
    X = np.asarray(X, dtype=np.float64)
    return Dataset(X, np.asarray(y), [f"{prefix}{j}" for j in range(X.shape[1])])


def pairwise_auc(scores, labels):
    """O(m^2) reference: wins plus half ties over all positive/negative pairs."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


@pytest.fixture
def xor_data():
    """Two epistatic binary features plus eight noise columns, n = 400."""
    rng = np.random.default_rng(11)
    n = 400
    a = rng.integers(0, 2, n)
    b = rng.integers(0, 2, n)
    y = a ^ b
    X = np.column_stack([rng.integers(0, 3, (n, 3)), a, rng.integers(0, 3, (n, 4)), b,
                         rng.integers(0, 3, n)])
    return make_dataset(X, y)


@pytest.fixture
def leakage_data():
    rng = np.random.default_rng(5)
    n = 200
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 6))
    X[:, 4] = y
    return make_dataset(X, y)
