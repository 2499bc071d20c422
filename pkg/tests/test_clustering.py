import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from oracles import dtw_bruteforce
from stquantile.clustering import (average_daily_profile, cluster_households,
                                   default_max_size, distance_matrix, dtw_distance,
                                   dtw_exact, fastdtw)

series = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=7)


def test_profile_examples():
    np.testing.assert_array_equal(average_daily_profile(np.full(12, 2.5), 4), np.full(4, 2.5))
    np.testing.assert_array_equal(average_daily_profile([1, 3, 2, 4], 2), [1.5, 3.5])
    with pytest.warns(RuntimeWarning):
        out = average_daily_profile([1, 3, 2, 4, 9], 2)
    np.testing.assert_array_equal(out, [1.5, 3.5])
    with pytest.raises(ValueError):
        average_daily_profile([1, 2], 3)


def test_dtw_examples():
    a = np.sin(np.linspace(0, 3, 30))
    assert dtw_distance(a, a) == 0.0
    assert dtw_distance([0.0], [5.0]) == 5.0
    assert dtw_distance([1, 2, 3], [1, 2, 2, 3]) == 0.0
    assert dtw_bruteforce([1, 2, 3], [1, 2, 2, 3]) == 0.0
    with pytest.raises(ValueError):
        dtw_distance([], [1.0])
    with pytest.raises(ValueError):
        dtw_distance([1.0], [1.0], radius=0)


@given(series, series)
def test_dtw_exact_matches_bruteforce(a, b):
    assert abs(dtw_exact(a, b) - dtw_bruteforce(a, b)) <= 1e-9


@given(series, series)
def test_dtw_symmetric(a, b):
    assert dtw_exact(a, b) == pytest.approx(dtw_exact(b, a), abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 64))
def test_dtw_identity_alignment_bound(seed, n):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=n), r.normal(size=n)
    assert dtw_distance(a, b) <= np.abs(a - b).sum() + 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 64), st.integers(1, 64))
def test_fastdtw_wide_radius_is_exact(seed, n, m):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=n), r.normal(size=m)
    assert abs(fastdtw(a, b, radius=max(n, m)) - dtw_exact(a, b)) <= 1e-12


def test_fastdtw_upper_bound_on_long_series():
    r = np.random.default_rng(1)
    for _ in range(5):
        a = np.cumsum(r.normal(size=150))
        b = np.cumsum(r.normal(size=130))
        exact = dtw_exact(a, b)
        approx, path = fastdtw(a, b, radius=2, return_path=True)
        assert approx >= exact - 1e-9
        assert approx <= 1.5 * exact + 1e-9
        assert path[0] == (0, 0) and path[-1] == (149, 129)
        steps = np.diff(np.array(path), axis=0)
        assert np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1)
        assert dtw_distance(a, b) == approx


def _two_groups():
    base = np.sin(np.linspace(0, 2 * np.pi, 48))
    return np.vstack([base] * 3 + [base + 5.0] * 3)


def test_two_groups_recovered():
    P = _two_groups()
    for cap in (3, 4, 5):
        labels = cluster_households(P, cap)
        np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(cluster_households(P, 6, n_clusters=2), [0, 0, 0, 1, 1, 1])
    assert np.all(cluster_households(P, 6) == 0)


def test_two_groups_match_exhaustive_search():
    # among all splits into two clusters of size <= 3, the group split has the least
    # within-cluster distance, and the clustering returns it
    import itertools
    P = _two_groups()
    D = distance_matrix(P)
    best = min(itertools.combinations(range(6), 3),
               key=lambda g: D[np.ix_(g, g)].sum()
               + D[np.ix_([i for i in range(6) if i not in g], [i for i in range(6) if i not in g])].sum())
    labels = cluster_households(P, 3)
    assert set(np.flatnonzero(labels == labels[best[0]])) == set(best)


def test_singletons_and_identical_profiles():
    r = np.random.default_rng(0)
    P = r.normal(size=(5, 10))
    np.testing.assert_array_equal(cluster_households(P, 1), np.arange(5))
    same = np.ones((7, 10))
    labels = cluster_households(same, 3)
    np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1, 2])
    assert sorted(np.bincount(labels)) == [1, 3, 3]


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12), st.integers(1, 6))
def test_cap_and_totality(seed, k, cap):
    r = np.random.default_rng(seed)
    labels = cluster_households(r.normal(size=(k, 6)), cap)
    assert labels.shape == (k,)
    assert np.bincount(labels).max() <= cap
    assert set(labels) == set(range(labels.max() + 1))


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 10), st.integers(1, 4))
def test_uncapped_matches_average_linkage(seed, k, n_clusters):
    r = np.random.default_rng(seed)
    D = squareform(r.uniform(1, 2, size=k * (k - 1) // 2))
    n_clusters = min(n_clusters, k)
    ours = cluster_households(np.zeros((k, 2)), k, distances=D, n_clusters=n_clusters)
    ref = fcluster(linkage(squareform(D), "average"), n_clusters, "maxclust")
    # same partition up to label names
    pairs = set(zip(ours, ref))
    assert len(pairs) == len(set(ours)) == len(set(ref))


def test_default_cap():
    assert default_max_size(2760) == 52
    assert default_max_size(1) == 1


def test_distance_matrix_shape_check():
    with pytest.raises(ValueError):
        cluster_households(np.zeros((3, 4)), 2, distances=np.zeros((2, 2)))
