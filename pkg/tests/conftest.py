from __future__ import annotations

import numpy as np
import pytest

from tsad_triage.core import Dataset, Interval, TimeSeries
from tsad_triage.synthetic import synthetic_dataset, write_archive


def brute_force_knn(train: np.ndarray, h: int, query: np.ndarray, k: int) -> tuple[float, int]:
    """Sort every (distance, start) pair and take the k-th."""
    pairs = []
    for s in range(len(train) - h + 1):
        d = float(np.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(train[s : s + h], query))))
        pairs.append((d, s))
    pairs.sort()
    return pairs[k - 1]


@pytest.fixture
def toy_dataset() -> Dataset:
    t = np.arange(600)
    train = np.sin(2 * np.pi * t[:300] / 50)
    test = np.sin(2 * np.pi * t[300:] / 50).copy()
    test[140:170] += 2.0
    return Dataset("toy", TimeSeries("toy/train", train), TimeSeries("toy/test", test), Interval(140, 170), "A sine wave.")


@pytest.fixture(scope="session")
def synthetic_archive(tmp_path_factory):
    d = tmp_path_factory.mktemp("archive")
    write_archive(d, 6, seed=100)
    return d


@pytest.fixture(scope="session")
def synthetic_sets():
    return [synthetic_dataset(s) for s in range(6)]
