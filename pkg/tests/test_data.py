from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsim.data import Dataset, load_csv, make_synthetic, partition_dirichlet, train_test_split
from fedsim.errors import ConfigError


def rows(data):
    return Counter((tuple(x), int(y)) for x, y in zip(data.features, data.labels))


def test_synthetic_is_deterministic_and_balanced():
    a = make_synthetic(4, 3, 103, seed=5)
    assert a == make_synthetic(4, 3, 103, seed=5)
    assert a != make_synthetic(4, 3, 103, seed=6)
    counts = a.class_counts()
    assert counts.max() - counts.min() <= 1


def test_feature_shift_moves_every_feature():
    a = make_synthetic(3, 4, 50, seed=1)
    b = make_synthetic(3, 4, 50, seed=1, shift=5.0)
    assert np.allclose(b.features - a.features, 5.0)


@given(n=st.integers(1, 120), clients=st.integers(1, 12), alpha=st.floats(0.05, 50),
       seed=st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_partition_conserves_the_multiset(n, clients, alpha, seed):
    if n < clients:
        return
    data = make_synthetic(3, 2, n, seed=0)
    parts = partition_dirichlet(data, clients, alpha, seed)
    assert len(parts) == clients
    total = Counter()
    for p in parts:
        total += rows(p)
    assert total == rows(data)
    assert all(len(p) > 0 for p in parts)


def test_partition_is_deterministic():
    data = make_synthetic(5, 3, 200, seed=0)
    a = partition_dirichlet(data, 6, 0.5, 3)
    b = partition_dirichlet(data, 6, 0.5, 3)
    assert all(x == y for x, y in zip(a, b))


def test_small_alpha_is_skewed():
    data = make_synthetic(10, 2, 2000, seed=0)
    parts = partition_dirichlet(data, 10, 0.05, 0)
    top_share = [p.class_counts().max() / len(p) for p in parts]
    assert np.mean(top_share) > 0.6


def test_train_test_split_sizes():
    data = make_synthetic(2, 2, 30, seed=0)
    tr, te = train_test_split(data, 10)
    assert len(tr) == 20 and len(te) == 10
    with pytest.raises(ConfigError):
        train_test_split(data, 30)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f0,f1,label\n0.5,1.5,0\n-1,2,2\n")
    d = load_csv(path, 3)
    assert d.num_classes == 3
    assert np.array_equal(d.features, [[0.5, 1.5], [-1, 2]])
    assert list(d.labels) == [0, 2]


def test_csv_bad_header(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,label\n1,2,0\n")
    with pytest.raises(ConfigError):
        load_csv(path)


def test_dataset_validation():
    with pytest.raises(Exception):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 3)
