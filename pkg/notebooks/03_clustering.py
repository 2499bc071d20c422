"""
Grouping series by their daily profile
======================================

Average each series over days, measure DTW distances between profiles and
merge them under a cluster-size cap.
"""

import numpy as np

from stquantile import average_daily_profile, cluster_households
from stquantile.clustering import default_max_size, distance_matrix

rng = np.random.default_rng(0)
period, days = 48, 30
phase = np.arange(period * days) % period
shapes = [np.sin(2 * np.pi * phase / period), np.cos(4 * np.pi * phase / period)]
series = np.array([shapes[j % 2] + 0.3 * rng.standard_normal(phase.size) for j in range(12)])

profiles = np.array([average_daily_profile(s, period) for s in series])
D = distance_matrix(profiles)
# the usual cap sqrt(n) exceeds the panel width here, so all series merge
cap = default_max_size(phase.size)
print(f"cap {cap}:", cluster_households(profiles, cap, distances=D).tolist())
print("cap 6:", cluster_households(profiles, 6, distances=D).tolist())
print("log distances (display only):")
print(np.round(np.log1p(D[:4, :4]), 2))
