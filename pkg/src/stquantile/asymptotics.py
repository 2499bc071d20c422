"""Gaussian approximation of the kernel quantile estimator and simultaneous
confidence bands built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .io import write_csv
from .kernel import KernelSpec, kernel_weights, nearest_psd, structure_matrix
from .model import QuantileDirection, SolverOptions, direction_from_tau
from .solver import WeightedSample, estimate_quantile, fit_sample, weighted_sample

__all__ = [
    "GaussianApprox",
    "PlugInCache",
    "building_blocks",
    "gaussian_approx",
    "plug_in_cache",
    "plug_in_gp",
    "norming_constant",
    "critical_multiplier",
    "thin_grid",
    "check_grid",
    "default_grid",
    "Band",
    "simultaneous_band",
    "location_bands",
    "write_band_csv",
]

LOG_4PI = math.log(4 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """Building blocks and moments of the limiting Gaussian process.

    Per-time arrays have a leading axis of length ``n``; aggregates are
    filled in by :func:`gaussian_approx`.
    """

    kernels: np.ndarray
    displacements: np.ndarray     # mu(X(t_i)) - q0
    eta_i: np.ndarray
    V1_i: np.ndarray
    V2_i: np.ndarray
    eta_t: Optional[np.ndarray] = None
    omega_t: Optional[np.ndarray] = None
    psi_t: Optional[np.ndarray] = None
    mu_q: Optional[np.ndarray] = None
    sigma_q: Optional[np.ndarray] = None
    q0: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def _kernel_stack(kernels, n=None, p=None):
    if isinstance(kernels, WeightedSample):
        return kernels.matrices()
    K = np.asarray(kernels, dtype=float)
    if K.ndim == 1:
        K = K[:, None, None] * np.eye(p)
    return K


def building_blocks(q0, mu_rows, sigma_rows, kernels, guard_eps: float = 1e-10,
                    rel_guard: float = 1e-6) -> GaussianApprox:
    """Per-time quantities ``eta_i = K_i (mu_i - q0)``, ``V1_i = K_i Sigma_i K_i`` and
    ``V2_i = I / ||eta_i|| - eta_i eta_i' / ||eta_i||^3``.

    Times whose kernel matrix is zero get zero blocks. So do active times
    with ``||eta_i|| <= guard_eps + rel_guard * max_j ||eta_j||``: there the
    direction of ``eta_i`` is numerically undefined and ``V2_i`` would be
    dominated by solver round-off. Their count is ``diagnostics['guarded']``.
    """
    mu = np.atleast_2d(np.asarray(mu_rows, dtype=float))
    n, p = mu.shape
    q0 = np.asarray(q0, dtype=float)
    K = _kernel_stack(kernels, n, p)
    S = np.asarray(sigma_rows, dtype=float)
    if K.shape != (n, p, p) or S.shape != (n, p, p):
        raise ValueError("kernels and covariances must be (n, p, p) stacks")
    d = mu - q0
    eta = np.einsum("nij,nj->ni", K, d)
    V1 = K @ S @ K
    active = np.any(K != 0, axis=(1, 2))
    norms = np.linalg.norm(eta, axis=1)
    top = norms[active].max() if active.any() else 0.0
    small = active & (norms <= guard_eps + rel_guard * top)
    keep = active & ~small
    r = np.where(keep, norms, 1.0)
    eye = np.eye(p)
    V2 = eye / r[:, None, None] - np.einsum("ni,nj->nij", eta, eta) / (r ** 3)[:, None, None]
    V2[~keep] = 0.0
    V1[~active] = 0.0
    eta[~active] = 0.0
    return GaussianApprox(K, d, eta, V1, V2, q0=q0,
                          diagnostics={"guarded": int(small.sum()), "active": int(active.sum())})


def _unit_rows(v, eps=0.0):
    r = np.linalg.norm(v, axis=1)
    return np.where((r > eps)[:, None], v / np.where(r > eps, r, 1.0)[:, None], 0.0)


def _repair(psi):
    """Add ``1e-10 tr / p`` to the diagonal when ``psi`` is numerically singular."""
    p = psi.shape[0]
    w = np.linalg.eigvalsh(0.5 * (psi + psi.T))
    scale = np.max(np.abs(w)) if w.size else 0.0
    if scale == 0:
        raise np.linalg.LinAlgError("Psi_t vanishes; the Gaussian approximation is degenerate")
    if np.min(np.abs(w)) > 1e-12 * scale:
        return psi, False
    ridge = 1e-10 * np.trace(psi) / p
    if not ridge > 0:
        ridge = 1e-10 * scale
    return psi + ridge * np.eye(p), True


def gaussian_approx(blocks: GaussianApprox, n: int, p: int, b_n: float) -> GaussianApprox:
    """Aggregate the per-time blocks.

    ``eta_t = (n p b)^{-1} sum K_i [d_i / ||d_i|| - eta_i / ||eta_i||]``,
    ``Omega_t = (n p b)^{-2} sum K_i V2_i V1_i V2_i' K_i``,
    ``Psi_t = n^{-1} sum K_i V2_i K_i``, then
    ``mu_q = Psi^{-1} eta_t`` and ``sigma_q = Psi^{-1} Omega Psi^{-1}``.
    """
    K, V1, V2 = blocks.kernels, blocks.V1_i, blocks.V2_i
    act = np.any(K != 0, axis=(1, 2))
    Ka, V1a, V2a = K[act], V1[act], V2[act]
    diff = _unit_rows(blocks.displacements[act]) - _unit_rows(blocks.eta_i[act])
    eta_t = np.einsum("nij,nj->i", Ka, diff) / (n * p * b_n)
    KV2 = Ka @ V2a
    omega = (KV2 @ V1a @ np.swapaxes(KV2, 1, 2)).sum(axis=0) / (n * p * b_n) ** 2
    omega = 0.5 * (omega + omega.T)
    psi = (KV2 @ Ka).sum(axis=0) / n
    psi = 0.5 * (psi + psi.T)
    psi_used, repaired = _repair(psi)
    psi_inv = np.linalg.inv(psi_used)
    mu_q = psi_inv @ eta_t
    sigma_q = psi_inv @ omega @ psi_inv
    sigma_q = 0.5 * (sigma_q + sigma_q.T)
    diag = dict(blocks.diagnostics, psi_repaired=repaired)
    return GaussianApprox(K, blocks.displacements, blocks.eta_i, V1, V2, eta_t, omega, psi,
                          mu_q, sigma_q, blocks.q0, diag)


@dataclass(frozen=True, eq=False)
class PlugInCache:
    """Dataset-level plug-in quantities shared by every grid point.

    ``medians[i]`` estimates ``mu(X(t_i))`` by the fitted spatial median at
    ``X(t_i)``; ``covariances[i]`` is the kernel-weighted residual
    covariance around it.
    """

    medians: np.ndarray
    covariances: np.ndarray


def plug_in_cache(dataset, spec: KernelSpec, opts: Optional[SolverOptions] = None,
                  covariance: str = "residual") -> PlugInCache:
    """Fitted medians at every ``X(t_i)`` and the matching covariance plug-ins.

    ``covariance="residual"`` uses the kernel-weighted covariance of the
    responses around the fitted median; ``"identity"`` uses ``I_p``.
    """
    if covariance not in ("residual", "identity"):
        raise ValueError(f"unknown covariance plug-in {covariance!r}")
    n, p = dataset.n, dataset.p
    zero = QuantileDirection(np.zeros(p), 0.5)
    med = np.empty((n, p))
    cov = np.empty((n, p, p))
    for i in range(n):
        x_i = dataset.covariates[i]
        med[i] = estimate_quantile(dataset, x_i, zero, spec, opts).q_hat
        if covariance == "identity":
            cov[i] = np.eye(p)
            continue
        k = kernel_weights(spec, x_i, dataset.covariates)
        R = dataset.responses - med[i]
        C = (k[:, None] * R).T @ R / k.sum()
        cov[i] = nearest_psd(C, 1e-12 * max(np.trace(C) / p, 1e-300))
    return PlugInCache(med, cov)


def plug_in_gp(dataset, x, u, spec: KernelSpec, opts: Optional[SolverOptions] = None,
               cache: Optional[PlugInCache] = None, q0=None) -> GaussianApprox:
    """Gaussian approximation at ``x`` with estimated inputs.

    The conditional means ``mu(X(t_i))`` are replaced by fitted spatial
    medians, ``q0`` by the fitted ``u``-quantile at ``x`` and ``Sigma(X(t_i))``
    by kernel-weighted residual covariances (see :class:`PlugInCache`).
    """
    opts = opts or SolverOptions()
    cache = cache if cache is not None else plug_in_cache(dataset, spec, opts)
    if q0 is None:
        q0 = estimate_quantile(dataset, x, u, spec, opts).q_hat
    sample = weighted_sample(dataset, x, spec)
    blocks = building_blocks(q0, cache.medians, cache.covariances, sample, opts.guard_eps)
    return gaussian_approx(blocks, dataset.n, dataset.p, spec.bandwidth)


# ------------------------------------------------------------------ bands

def norming_constant(t: float, z: float) -> float:
    """``C_t(z) = (z - (log log t + log 4 pi) / 2) / sqrt(2 log t)`` for ``t > e``."""
    if not t > math.e:
        raise ValueError("norming constant needs t > e")
    lt = math.log(t)
    return (z - 0.5 * (math.log(lt) + LOG_4PI)) / math.sqrt(2 * lt)


def critical_multiplier(alpha: float, m: int) -> float:
    """``C_m(-log(-log(1 - alpha)) + 2 log m)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if m < 3:
        raise ValueError("need at least three grid points")
    return norming_constant(m, -math.log(-math.log1p(-alpha)) + 2 * math.log(m))


def thin_grid(points, b_n: float) -> np.ndarray:
    """Greedy thinning: keep a point when it is farther than ``2 b_n`` from all kept ones."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    kept = []
    for x in P:
        if all(np.linalg.norm(x - k) > 2 * b_n for k in kept):
            kept.append(x)
    return np.array(kept).reshape(len(kept), P.shape[1])


def check_grid(points, b_n: float) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] < 3:
        raise ValueError("need at least three grid points")
    diff = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    diff[np.diag_indices_from(diff)] = np.inf
    if diff.min() <= 2 * b_n:
        raise ValueError(f"grid points must be more than 2 b_n = {2 * b_n:g} apart")
    return P


def default_grid(covariates, b_n: float, anchor=None, min_count: int = 10) -> np.ndarray:
    """Observed covariate values thinned to the ``2 b_n`` spacing rule.

    Candidates are the observed rows with at least ``min_count`` observations
    within ``b_n``; they are visited in order of distance from ``anchor``
    (default: the coordinatewise median), so the grid grows outward from
    the bulk of the data.
    """
    X = np.asarray(covariates, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    cand = X[(dist <= b_n).sum(axis=1) >= min_count]
    a = np.median(X, axis=0) if anchor is None else np.broadcast_to(np.asarray(anchor, float), X.shape[1:])
    order = np.argsort(np.linalg.norm(cand - a, axis=1), kind="stable")
    return thin_grid(cand[order], b_n)


@dataclass(frozen=True, eq=False)
class Band:
    grid: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    multiplier: float
    alpha: float


def _grid_fits(dataset, grid, tau, spec, opts):
    spec = spec.compactified()
    opts = opts or SolverOptions()
    direction = tau if isinstance(tau, QuantileDirection) else direction_from_tau(tau, dataset.p)
    cache = plug_in_cache(dataset, spec, opts)
    fits = []
    for x in grid:
        q = estimate_quantile(dataset, x, direction, spec, opts).q_hat
        fits.append(plug_in_gp(dataset, x, direction, spec, opts, cache, q0=q))
    return spec, fits


def _band_from_fits(fits, spec, p, contrast, subset, alpha, grid):
    m = len(fits)
    C = critical_multiplier(alpha, m)
    subset = np.arange(p) if subset is None else np.asarray(subset)
    l = np.asarray(contrast, dtype=float)
    if l.shape != (subset.size,) or not math.isclose(np.linalg.norm(l), 1.0, rel_tol=1e-9):
        raise ValueError("contrast must be a unit vector over the location subset")
    center = np.empty(m)
    half = np.empty(m)
    for k, g in enumerate(fits):
        sub = np.ix_(subset, subset)
        center[k] = l @ g.q0[subset] - l @ g.mu_q[subset]
        half[k] = C * p * spec.bandwidth * math.sqrt(max(l @ g.sigma_q[sub] @ l, 0.0))
    return Band(np.asarray(grid), center, center - half, center + half, C, alpha)


def simultaneous_band(dataset, grid, tau, contrast, subset=None, alpha: float = 0.05,
                      spec: Optional[KernelSpec] = None,
                      opts: Optional[SolverOptions] = None) -> Band:
    """Simultaneous ``1 - alpha`` band for ``l' Q(u_tau, x)`` over a grid.

    The center is ``l' q_hat(tau, x) - l' mu_q(x)`` on the location subset and
    the half-width is ``C_m(z_alpha + 2 log m) p b_n sqrt(l' Sigma_q(x) l)``.
    Grid points must be more than ``2 b_n`` apart. Gaussian profiles are
    truncated at the bandwidth so kernels at distinct grid points do not
    overlap.
    """
    spec = spec or KernelSpec.for_sample_size(dataset.n)
    grid = check_grid(grid, spec.bandwidth)
    spec, fits = _grid_fits(dataset, grid, tau, spec, opts)
    return _band_from_fits(fits, spec, dataset.p, contrast, subset, alpha, grid)


def location_bands(dataset, grid, tau, alpha: float = 0.05, spec: Optional[KernelSpec] = None,
                   opts: Optional[SolverOptions] = None, locations: Optional[Sequence[int]] = None):
    """One band per location (contrast ``e_j``), sharing the grid fits."""
    spec = spec or KernelSpec.for_sample_size(dataset.n)
    grid = check_grid(grid, spec.bandwidth)
    spec, fits = _grid_fits(dataset, grid, tau, spec, opts)
    locs = range(dataset.p) if locations is None else locations
    return {j: _band_from_fits(fits, spec, dataset.p, [1.0], [j], alpha, grid) for j in locs}


def write_band_csv(path, bands: dict, labels, comment=None):
    """``x_index,location,center,lower,upper`` rows for :func:`location_bands` output."""
    rows = []
    for j, band in bands.items():
        for k in range(len(band.center)):
            rows.append([k, labels[j], repr(float(band.center[k])),
                         repr(float(band.lower[k])), repr(float(band.upper[k]))])
    rows.sort(key=lambda r: (r[0], list(labels).index(r[1])))
    write_csv(path, ["x_index", "location", "center", "lower", "upper"], rows, comment)
