"""Sup-type homogeneity tests with Gumbel calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .asymptotics import (LOG_4PI, check_grid, critical_multiplier, plug_in_cache,
                          plug_in_gp)
from .io import write_json
from .kernel import KernelSpec
from .model import QuantileDirection, SolverOptions, direction_from_tau
from .solver import WeightedSample, estimate_quantile, residual, weighted_sample

__all__ = [
    "TestReport",
    "inv_sqrt_psd",
    "sup_eigen_statistic",
    "critical_value",
    "p_value",
    "solve_beta",
    "ray_fit",
    "structural_test",
    "test_covariate_homogeneity",
    "test_temporal_homogeneity",
]


@dataclass(frozen=True, eq=False)
class TestReport:
    test: str
    tau: float
    statistic: float
    critical_value: float
    p_value: float
    alpha: float
    m_n: int
    per_x_errors: dict = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    # keep pytest from collecting this class
    __test__ = False

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> dict:
        return {"test": self.test, "tau": self.tau, "statistic": self.statistic,
                "critical_value": self.critical_value, "p_value": self.p_value,
                "alpha": self.alpha, "m_n": self.m_n, "reject": self.reject}

    def write(self, path) -> None:
        write_json(path, self.to_dict())


def inv_sqrt_psd(S, floor: float = 1e-10) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues floored at ``floor * lambda_max``."""
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    w, V = np.linalg.eigh(S)
    top = w.max()
    if not top > 0:
        raise np.linalg.LinAlgError("covariance has no positive eigenvalue")
    w = np.maximum(w, floor * top)
    return (V / np.sqrt(w)) @ V.T


def sup_eigen_statistic(errors, sigmas, p: int, b_n: float) -> float:
    """``(p b_n)^{-1} max_x lambda_1(Sigma^{-1/2} e e' Sigma^{-1/2})``.

    The rank-one matrix has the single nonzero eigenvalue
    ``||Sigma^{-1/2} e||^2``, which is what gets computed.
    """
    best = 0.0
    for e, S in zip(errors, sigmas):
        e = np.asarray(e, dtype=float)
        if not np.all(np.isfinite(e)):
            raise ValueError("errors must be finite")
        z = inv_sqrt_psd(S) @ e
        best = max(best, float(z @ z))
    return best / (p * b_n)


def critical_value(alpha: float, m_n: int) -> float:
    """Gumbel critical value ``C_m(-log(-log(1 - alpha)) + 2 log m)``."""
    return critical_multiplier(alpha, m_n)


def p_value(statistic: float, m_n: int) -> float:
    """Upper-tail Gumbel probability of the normalized statistic."""
    if m_n < 3:
        raise ValueError("need at least three grid points")
    lm = math.log(m_n)
    z = statistic * math.sqrt(2 * lm) - 2 * lm + 0.5 * (math.log(lm) + LOG_4PI)
    if z < -700:
        return 1.0
    return float(-math.expm1(-math.exp(-z)))


def _ray_root(sample: WeightedSample, u, d, bound: float, tol: float = 1e-10):
    """``beta`` minimizing the criterion along ``beta * d``.

    The directional derivative ``d' residual(beta d)`` is nonincreasing in
    ``beta``; its sign change is bracketed on ``[-bound, bound]`` and refined
    by bisection. Without a sign change the 1-D criterion is minimized
    directly.
    """
    g = lambda beta: float(d @ residual(beta * d, sample, u))
    lo, hi = -bound, bound
    glo, ghi = g(lo), g(hi)
    if glo >= 0 >= ghi:
        while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (lo + hi)
            gm = g(mid)
            if gm > 0:
                lo = mid
            elif gm < 0:
                hi = mid
            else:
                return mid, True
        return 0.5 * (lo + hi), True
    from .solver import objective
    res = minimize_scalar(lambda b: objective(b * d, sample, u), bounds=(lo, hi),
                          method="bounded", options={"xatol": tol})
    return float(res.x), False


def _bound(sample, scale):
    Y = sample.responses[sample.mask]
    return 2.0 * max(float(np.max(np.linalg.norm(Y, axis=1))), 1.0) / scale


def solve_beta(dataset, x, tau: float, spec: KernelSpec,
               opts: Optional[SolverOptions] = None) -> float:
    """Scalar ``beta`` such that ``beta u_tau`` best fits the ``tau`` quantile at ``x``.

    Solves ``u_tau' residual(beta u_tau) = 0``; undefined for ``tau = 0.5``
    where ``u_tau = 0``.
    """
    if math.isclose(tau, 0.5):
        raise ValueError("tau = 0.5 gives u_tau = 0 and an unidentified ray")
    u = direction_from_tau(tau, dataset.p).u
    sample = weighted_sample(dataset, x, spec)
    if not sample.mask.any():
        raise np.linalg.LinAlgError("all kernel weights vanish at this covariate value")
    beta, _ = _ray_root(sample, u, u, _bound(sample, np.linalg.norm(u)))
    return beta


def ray_fit(sample: WeightedSample, u) -> np.ndarray:
    """Best fit on the line spanned by ``1_p``; returns the fitted vector.

    For ``tau != 0.5`` this is ``solve_beta(...) * u_tau``; the unit ray keeps
    the fit defined at the median.
    """
    u = u.u if isinstance(u, QuantileDirection) else np.asarray(u, dtype=float)
    d = np.ones(sample.p) / math.sqrt(sample.p)
    beta, _ = _ray_root(sample, u, d, _bound(sample, 1.0))
    return beta * d


def structural_test(dataset, tau: float, grid, alpha: float, spec: KernelSpec,
                    null_fit: Callable, opts: Optional[SolverOptions] = None,
                    name: str = "structural", covariance: str = "residual") -> TestReport:
    """Sup-eigenvalue test of a structural restriction on ``Q(u_tau, x)``.

    ``null_fit(x, sample, direction, fit_at)`` returns the null-restricted
    quantile at ``x``; ``fit_at(x)`` gives the unrestricted fit at any
    covariate. The error at each grid point is
    ``q_hat(tau, x) - null_fit(...) - mu_q(x)``.
    """
    opts = opts or SolverOptions()
    spec = spec.compactified()
    grid = check_grid(grid, spec.bandwidth)
    direction = direction_from_tau(tau, dataset.p)
    cache = plug_in_cache(dataset, spec, opts, covariance)
    fit_at = lambda x: estimate_quantile(dataset, x, direction, spec, opts).q_hat
    errors, sigmas, per_x = [], [], {}
    repaired = 0
    for k, x in enumerate(grid):
        q = fit_at(x)
        g = plug_in_gp(dataset, x, direction, spec, opts, cache, q0=q)
        repaired += int(g.diagnostics.get("psi_repaired", False))
        sample = weighted_sample(dataset, x, spec)
        e = q - null_fit(x, sample, direction, fit_at) - g.mu_q
        errors.append(e)
        sigmas.append(g.sigma_q)
        per_x[k] = e
    m = len(grid)
    stat = sup_eigen_statistic(errors, sigmas, dataset.p, spec.bandwidth)
    return TestReport(name, float(tau), stat, critical_value(alpha, m), p_value(stat, m),
                      float(alpha), m, per_x, {"psi_repaired": repaired})


def test_covariate_homogeneity(dataset, tau: float, grid, alpha: float = 0.05,
                               spec: Optional[KernelSpec] = None,
                               opts: Optional[SolverOptions] = None,
                               covariance: str = "residual") -> TestReport:
    """Null: ``Q(u_tau, x) = beta(x) u_tau`` for every ``x``, i.e. the quantile
    is the same at all locations."""
    spec = spec or KernelSpec.for_sample_size(dataset.n)
    null = lambda x, sample, direction, fit_at: ray_fit(sample, direction)
    return structural_test(dataset, tau, grid, alpha, spec, null, opts, "covariate", covariance)


def test_temporal_homogeneity(dataset, tau: float, grid, alpha: float = 0.05,
                              spec: Optional[KernelSpec] = None,
                              opts: Optional[SolverOptions] = None,
                              covariance: str = "residual") -> TestReport:
    """Null: ``Q(u_tau, t) = t Q(u_tau, 1)`` for time covariates ``t`` in (0, 1]."""
    if dataset.d != 1:
        raise ValueError("the temporal test needs a scalar time covariate")
    g = np.asarray(grid, dtype=float).reshape(-1)
    if np.any(g <= 0) or np.any(g > 1):
        raise ValueError("time grid must lie in (0, 1]")
    spec = spec or KernelSpec.for_sample_size(dataset.n)
    anchor = {}

    def null(x, sample, direction, fit_at):
        if "q1" not in anchor:
            anchor["q1"] = fit_at(np.array([1.0]))
        return float(np.asarray(x).ravel()[0]) * anchor["q1"]

    return structural_test(dataset, tau, g[:, None], alpha, spec, null, opts, "temporal",
                           covariance)
