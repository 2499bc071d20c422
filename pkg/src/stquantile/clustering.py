"""Household grouping: daily profiles, DTW distances and size-capped
average-linkage clustering."""

from __future__ import annotations

import math
import warnings
from typing import Optional

import numpy as np

__all__ = [
    "average_daily_profile",
    "dtw_exact",
    "fastdtw",
    "dtw_distance",
    "distance_matrix",
    "cluster_households",
    "default_max_size",
    "EXACT_MAX_LEN",
]

EXACT_MAX_LEN = 64


def average_daily_profile(series, period: int) -> np.ndarray:
    """Mean of the observations at each phase ``0..period-1`` across days.

    A trailing partial day is dropped with a warning.
    """
    x = np.asarray(series, dtype=float).ravel()
    if period < 1:
        raise ValueError("period must be positive")
    if period > x.size:
        raise ValueError("period exceeds the series length")
    days = x.size // period
    if days * period != x.size:
        warnings.warn(f"dropping {x.size - days * period} trailing observations "
                      "that do not fill a whole day", RuntimeWarning)
    return x[: days * period].reshape(days, period).mean(axis=0)


def _check(a):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("DTW needs nonempty series")
    return a


def _dp_full(a, b):
    n, m = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :])
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = D[i], D[i - 1]
        c = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = c[j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return D


def _backtrack(D):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        steps = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    return path[::-1]


def dtw_exact(a, b, return_path: bool = False):
    """Dynamic time warping cost with absolute-difference local cost."""
    a, b = _check(a), _check(b)
    D = _dp_full(a, b)
    cost = float(D[-1, -1])
    return (cost, _backtrack(D)) if return_path else cost


def _dp_window(a, b, window):
    D = {(-1, -1): (0.0, None)}
    inf = (math.inf, None)
    for i, j in window:
        c = abs(a[i] - b[j])
        best = min((D.get((i - 1, j), inf)[0], (i - 1, j)),
                   (D.get((i, j - 1), inf)[0], (i, j - 1)),
                   (D.get((i - 1, j - 1), inf)[0], (i - 1, j - 1)), key=lambda s: s[0])
        D[i, j] = (c + best[0], best[1])
    path = []
    cell = (a.size - 1, b.size - 1)
    while cell != (-1, -1):
        path.append(cell)
        cell = D[cell][1]
    return D[a.size - 1, b.size - 1][0], path[::-1]


def _halve(x):
    m = x.size - x.size % 2
    return 0.5 * (x[:m:2] + x[1:m:2])


def _expand(path, n, m, radius):
    grown = set()
    for i, j in path:
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                grown.add((i + di, j + dj))
    fine = set()
    for i, j in grown:
        fine.update(((2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)))
    window = []
    start = 0
    for i in range(n):
        first = None
        for j in range(start, m):
            if (i, j) in fine:
                window.append((i, j))
                if first is None:
                    first = j
            elif first is not None:
                break
        start = first if first is not None else start
    return window


def _fastdtw(a, b, radius):
    if a.size < radius + 2 or b.size < radius + 2:
        cost, path = dtw_exact(a, b, return_path=True)
        return cost, path
    _, coarse = _fastdtw(_halve(a), _halve(b), radius)
    return _dp_window(a, b, _expand(coarse, a.size, b.size, radius))


def fastdtw(a, b, radius: int = 2, return_path: bool = False):
    """Multi-resolution DTW approximation.

    The series are halved recursively, the optimal path at the coarse level
    is projected to the finer level, widened by ``radius`` cells, and the DP
    is rerun inside that band. The result is an upper bound on the exact cost.
    """
    a, b = _check(a), _check(b)
    if radius < 1:
        raise ValueError("radius must be at least 1")
    cost, path = _fastdtw(a, b, int(radius))
    return (float(cost), path) if return_path else float(cost)


def dtw_distance(a, b, radius: int = 2) -> float:
    """DTW cost: exact when both series have at most 64 points, FastDTW otherwise."""
    a, b = _check(a), _check(b)
    if radius < 1:
        raise ValueError("radius must be at least 1")
    if max(a.size, b.size) <= EXACT_MAX_LEN:
        return dtw_exact(a, b)
    return fastdtw(a, b, radius)


def distance_matrix(profiles, radius: int = 2) -> np.ndarray:
    """Symmetric matrix of pairwise :func:`dtw_distance` values."""
    P = np.atleast_2d(np.asarray(profiles, dtype=float))
    k = P.shape[0]
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = dtw_distance(P[i], P[j], radius)
    return D


def default_max_size(n_times: int) -> int:
    """``floor(sqrt(n))`` for a panel with ``n`` time points."""
    return max(1, math.isqrt(int(n_times)))


def cluster_households(profiles, max_size: int, radius: int = 2,
                       distances=None, n_clusters: Optional[int] = None) -> np.ndarray:
    """Average-linkage agglomeration that never forms a cluster above ``max_size``.

    At each step the admissible pair with the smallest average DTW distance
    is merged; ties go to the pair of clusters with the lowest row indices.
    Merging stops when no admissible pair remains or ``n_clusters`` is
    reached. :func:`default_max_size` gives the usual cap.

    Returns
    -------
    labels : (p,) int array
        Cluster index of each row, numbered by first appearance.
    """
    P = np.atleast_2d(np.asarray(profiles, dtype=float))
    k = P.shape[0]
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    D = distance_matrix(P, radius) if distances is None else np.array(distances, dtype=float)
    if D.shape != (k, k):
        raise ValueError("distance matrix does not match the profiles")
    size = np.ones(k, dtype=int)
    alive = np.ones(k, dtype=bool)
    owner = np.arange(k)
    target = 1 if n_clusters is None else max(1, int(n_clusters))
    iu = np.triu_indices(k, 1)
    while alive.sum() > target:
        pair_ok = alive[iu[0]] & alive[iu[1]] & (size[iu[0]] + size[iu[1]] <= max_size)
        if not pair_ok.any():
            break
        vals = np.where(pair_ok, D[iu], np.inf)
        best = int(np.argmin(vals))
        a, b = int(iu[0][best]), int(iu[1][best])
        na, nb = size[a], size[b]
        merged = (na * D[a] + nb * D[b]) / (na + nb)
        D[a], D[:, a] = merged, merged
        D[a, a] = 0.0
        size[a] += nb
        alive[b] = False
        owner[owner == b] = a
    _, labels = np.unique(owner, return_inverse=True)
    return labels.astype(int)
