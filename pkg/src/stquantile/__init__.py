"""Conditional geometric quantiles for multivariate time series.

Kernel-localized estimation of spatial quantiles given covariates, with
simultaneous bands, homogeneity tests, simulation designs and DTW-based
grouping of series.
"""

__version__ = "0.1.0"

from .model import (DatasetError, QuantileDirection, QuantileEstimate, SolverOptions,
                    SpatioTemporalDataset, direction_from_tau, load_dataset, save_dataset)
from .kernel import KernelSpec, kernel_matrix, kernel_weights, scaled_bandwidth
from .solver import DegenerateWeightsError, estimate_quantile, fit_sample, objective
from .asymptotics import Band, default_grid, location_bands, simultaneous_band
from .inference import (TestReport, critical_value, p_value, test_covariate_homogeneity,
                        test_temporal_homogeneity)
from .clustering import average_daily_profile, cluster_households, dtw_distance

__all__ = [
    "DatasetError",
    "QuantileDirection",
    "QuantileEstimate",
    "SolverOptions",
    "SpatioTemporalDataset",
    "direction_from_tau",
    "load_dataset",
    "save_dataset",
    "KernelSpec",
    "kernel_matrix",
    "kernel_weights",
    "scaled_bandwidth",
    "DegenerateWeightsError",
    "estimate_quantile",
    "fit_sample",
    "objective",
    "Band",
    "default_grid",
    "location_bands",
    "simultaneous_band",
    "TestReport",
    "critical_value",
    "p_value",
    "test_covariate_homogeneity",
    "test_temporal_homogeneity",
    "average_daily_profile",
    "cluster_households",
    "dtw_distance",
]
