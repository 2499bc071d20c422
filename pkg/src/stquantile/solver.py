"""Kernel-weighted geometric quantile criterion and its IRLS minimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import KernelSpec, kernel_weights, structure_matrix
from .model import QuantileDirection, QuantileEstimate, SolverOptions

__all__ = [
    "DegenerateWeightsError",
    "WeightedSample",
    "weighted_sample",
    "objective",
    "irls_step",
    "residual",
    "estimate_quantile",
    "fit_sample",
    "weighted_median",
]


class DegenerateWeightsError(np.linalg.LinAlgError):
    """No time point receives positive kernel weight."""


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Responses together with their kernel matrices ``K(t_i)``.

    Kernels are stored either as scalar weights times a common structure
    matrix (``K_i = weights[i] * structure``, identity when ``structure`` is
    None) or as an explicit ``(n, p, p)`` stack in ``kernels``.
    """

    responses: np.ndarray
    weights: np.ndarray
    structure: Optional[np.ndarray] = None
    kernels: Optional[np.ndarray] = None

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.responses, dtype=float))
        object.__setattr__(self, "responses", Y)
        if self.kernels is not None:
            K = np.asarray(self.kernels, dtype=float)
            if K.shape != (Y.shape[0], Y.shape[1], Y.shape[1]):
                raise ValueError("kernels must be an (n, p, p) stack")
            object.__setattr__(self, "kernels", K)
            active = np.any(K != 0, axis=(1, 2)).astype(float)
            object.__setattr__(self, "weights", active)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (Y.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be a nonnegative vector, one per time point")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_matrices(cls, kernels, responses) -> "WeightedSample":
        return cls(responses, np.ones(len(responses)), kernels=kernels)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def p(self) -> int:
        return self.responses.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.weights > 0

    @property
    def scalar(self) -> bool:
        return self.kernels is None

    def matrices(self) -> np.ndarray:
        """Explicit ``(n, p, p)`` stack of kernel matrices."""
        if self.kernels is not None:
            return self.kernels
        S = np.eye(self.p) if self.structure is None else self.structure
        return self.weights[:, None, None] * S

    def restrict(self) -> "WeightedSample":
        """Drop time points with zero kernel matrices."""
        m = self.mask
        if self.kernels is not None:
            return WeightedSample(self.responses[m], self.weights[m], kernels=self.kernels[m])
        return WeightedSample(self.responses[m], self.weights[m], self.structure)

    # -- linear algebra shared by the solver and the diagnostics

    def _S(self, v):
        return v if self.structure is None else v @ self.structure.T

    def apply(self, v) -> np.ndarray:
        """Rows ``K_i v_i`` for an ``(n, p)`` array ``v``."""
        if self.kernels is not None:
            return np.einsum("nij,nj->ni", self.kernels, v)
        return self.weights[:, None] * self._S(v)

    def kernel_u(self, u) -> np.ndarray:
        """Rows ``K_i u``."""
        return self.apply(np.broadcast_to(u, self.responses.shape))

    def normal_system(self, w):
        """``(sum_i w_i K_i^2, sum_i w_i K_i^2 Y_i)``."""
        if self.kernels is not None:
            K2 = np.einsum("nij,njk->nik", self.kernels, self.kernels)
            return np.einsum("n,nij->ij", w, K2), np.einsum("n,nij,nj->i", w, K2, self.responses)
        c = w * self.weights ** 2
        A = c.sum() * np.eye(self.p)
        rhs = c @ self.responses
        if self.structure is not None:
            S2 = self.structure @ self.structure
            A, rhs = c.sum() * S2, S2 @ rhs
        return A, rhs


def weighted_sample(dataset, x, spec: KernelSpec) -> WeightedSample:
    """Kernel weights of every time point of ``dataset`` around covariate ``x``."""
    w = kernel_weights(spec, x, dataset.covariates)
    S = structure_matrix(spec, dataset.p, dataset.coords)
    return WeightedSample(dataset.responses, w, S)


def _u(u):
    return u.u if isinstance(u, QuantileDirection) else np.asarray(u, dtype=float)


def _terms(q, sample, u):
    D = sample.apply(sample.responses - q)
    norms = np.linalg.norm(D, axis=1)
    KU = sample.kernel_u(u)
    return D, norms, KU


def objective(q, sample: WeightedSample, u) -> float:
    """``(1/n) sum_i ||K_i (Y_i - q)|| + u' K_i (Y_i - q)``."""
    u = _u(u)
    q = np.asarray(q, dtype=float)
    D, norms, KU = _terms(q, sample, u)
    lin = np.einsum("ij,ij->i", KU, sample.responses - q)
    return float((norms.sum() + lin.sum()) / sample.n)


def residual(q, sample: WeightedSample, u) -> np.ndarray:
    """Estimating-equation residual ``(1/n) sum_i K_i [K_i(Y_i - q)/||.|| + u]``.

    A zero displacement contributes a zero unit vector. The residual is the
    negative gradient of :func:`objective` wherever the latter is smooth.
    """
    u = _u(u)
    q = np.asarray(q, dtype=float)
    D, norms, KU = _terms(q, sample, u)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[:, None] > 0, D / safe[:, None], 0.0)
    return (sample.apply(unit).sum(axis=0) + KU.sum(axis=0)) / sample.n


def irls_step(q, sample: WeightedSample, u, opts: Optional[SolverOptions] = None) -> np.ndarray:
    """One reweighted least-squares update.

    Solves ``[sum w_i K_i^2 + rho I] q+ = c sum K_i u + sum w_i K_i^2 Y_i + rho q``
    with ``w_i = 1 / ||K_i (Y_i - q)||``, clamped at ``1 / guard_eps``, and
    ``c = opts.drift``. With ``c = 1`` the update minimizes a quadratic
    majorizer of :func:`objective`, so the objective never increases; the
    proximal ``rho q`` term keeps that true for any ridge.
    """
    opts = opts or SolverOptions()
    u = _u(u)
    q = np.asarray(q, dtype=float)
    active = sample.mask
    if not active.any():
        raise DegenerateWeightsError("all kernel weights vanish at this covariate value")
    D = sample.apply(sample.responses - q)
    norms = np.linalg.norm(D, axis=1)
    w = np.where(active, 1.0 / np.maximum(norms, opts.guard_eps), 0.0)
    A, rhs = sample.normal_system(w)
    rhs = rhs + opts.drift * sample.kernel_u(u).sum(axis=0)
    rho = opts.ridge if opts.ridge is not None else 1e-8 * np.trace(A) / sample.p
    if rho > 0:
        A = A + rho * np.eye(sample.p)
        rhs = rhs + rho * q
    try:
        step = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateWeightsError("reweighted normal equations are singular") from None
    if not np.all(np.isfinite(step)):
        raise DegenerateWeightsError("reweighted normal equations are singular")
    return step


def weighted_median(values, weights) -> np.ndarray:
    """Coordinatewise lower weighted median of the rows of ``values``."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=0)
    cum = np.cumsum(weights[order], axis=0)
    idx = np.argmax(cum >= 0.5 * cum[-1], axis=0)
    return sorted_vals[idx, np.arange(values.shape[1])]


def _datapoint_certificate(j, sample, u, tie_tol):
    """Min-norm subgradient at ``q = Y_j`` and a descent direction.

    Returns ``(excess, direction)`` where ``excess <= 0`` certifies that
    ``Y_j`` minimizes the objective (up to the ``1/n`` scaling).
    """
    Y = sample.responses
    q = Y[j]
    D = sample.apply(Y - q)
    norms = np.linalg.norm(D, axis=1)
    tied = np.linalg.norm(Y - q, axis=1) <= tie_tol
    tied &= sample.mask
    safe = np.where(tied | (norms == 0), 1.0, norms)
    unit = np.where((tied | (norms == 0))[:, None], 0.0, D / safe[:, None])
    G = sample.apply(unit).sum(axis=0) + sample.kernel_u(u).sum(axis=0)
    if sample.scalar:
        mass = sample.weights[tied].sum()
        if sample.structure is None:
            g = np.linalg.norm(G)
            return g - mass, G
        Sinv_G = np.linalg.lstsq(sample.structure, G, rcond=None)[0]
        direction = np.linalg.lstsq(sample.structure, Sinv_G, rcond=None)[0]
        return np.linalg.norm(Sinv_G) - mass, direction
    # explicit stacks: conservative test through the summed tied kernels
    Ksum = sample.kernels[tied].sum(axis=0)
    v = np.linalg.lstsq(Ksum, G, rcond=None)[0]
    direction = np.linalg.lstsq(Ksum, v, rcond=None)[0]
    return np.linalg.norm(v) - 1.0 if np.allclose(Ksum @ v, G) else np.inf, direction


def _min_subgradient_norm(q, sample, u, tie_tol) -> float:
    """Norm of the smallest subgradient of the objective at ``q``."""
    close = np.where(sample.mask & (np.linalg.norm(sample.responses - q, axis=1) <= tie_tol))[0]
    if close.size == 0:
        return float(np.linalg.norm(residual(q, sample, u)))
    excess, _ = _datapoint_certificate(close[0], sample, u, tie_tol)
    return max(float(excess), 0.0) / sample.n


def _escape(j, sample, u, direction, f0):
    """Backtracking step away from a non-optimal data point.

    Returns None when no step decreases the objective, which happens when
    the optimality excess at ``Y_j`` is round-off.
    """
    Y = sample.responses
    scale = np.median(np.linalg.norm(Y[sample.mask] - Y[j], axis=1))
    if not scale > 0:
        scale = 1.0
    d = direction / np.linalg.norm(direction)
    step = scale
    for _ in range(60):
        cand = Y[j] + step * d
        if objective(cand, sample, u) < f0:
            return cand
        step *= 0.5
    return None


def _extrapolate(q0, q1, q2, sample, u):
    """Squared-extrapolation step over two IRLS updates, kept only if it
    improves on ``q2`` so the objective still decreases monotonically."""
    r = q1 - q0
    v = q2 - q1 - r
    nv = np.linalg.norm(v)
    if nv == 0:
        return q2
    a = -np.linalg.norm(r) / nv
    if a >= -1:
        return q2
    cand = q0 - 2 * a * r + a * a * v
    return cand if objective(cand, sample, u) < objective(q2, sample, u) else q2


def fit_sample(sample: WeightedSample, u, opts: Optional[SolverOptions] = None,
               q0=None) -> QuantileEstimate:
    """Minimize :func:`objective` over ``q`` by iterating :func:`irls_step`.

    Iteration stops once the sup-norm step is below ``opts.tol`` and the
    residual norm is below ``opts.residual_tol``, or as soon as the nearest
    data point is certified optimal by its subgradient condition. With
    ``opts.accelerate`` pairs of IRLS updates are combined by a safeguarded
    squared extrapolation; ``iterations`` counts IRLS updates either way.
    """
    opts = opts or SolverOptions()
    u = _u(u)
    if u.size != sample.p:
        raise ValueError("direction and responses disagree in dimension")
    active = sample.mask
    if not active.any():
        raise DegenerateWeightsError("all kernel weights vanish at this covariate value")
    work = sample.restrict()
    Y = work.responses
    spread = float(np.max(np.abs(Y - Y.mean(axis=0)))) if Y.shape[0] > 1 else 0.0
    tie_tol = 1e-12 * max(1.0, spread, float(np.max(np.abs(Y))))
    q = weighted_median(Y, work.weights) if q0 is None else np.asarray(q0, dtype=float)

    f = objective(q, sample, u)
    history = [f]
    converged = at_point = False
    iterations = 0
    while iterations < opts.max_iter:
        gap = np.linalg.norm(Y - q, axis=1)
        j = int(np.argmin(gap))
        excess, direction = _datapoint_certificate(j, work, u, tie_tol)
        if excess <= 0:
            # the subgradient condition certifies Y_j as a global minimizer
            q = Y[j].copy()
            converged = at_point = True
            history.append(objective(q, sample, u))
            break
        if gap[j] <= max(tie_tol, 1e-9 * max(1.0, spread)):
            moved = _escape(j, work, u, direction, objective(Y[j], work, u))
            if moved is None:
                q = Y[j].copy()
                at_point = True
                converged = excess / sample.n <= opts.residual_tol
                history.append(objective(q, sample, u))
                break
            q = moved
        q1 = irls_step(q, work, u, opts)
        iterations += 1
        step = float(np.max(np.abs(q1 - q)))
        if opts.accelerate and iterations < opts.max_iter and step > opts.tol:
            q2 = irls_step(q1, work, u, opts)
            iterations += 1
            q_next = _extrapolate(q, q1, q2, work, u)
            step = float(np.max(np.abs(q2 - q1)))
        else:
            q_next = q1
        q = q_next
        history.append(objective(q, sample, u))
        if step <= opts.tol and np.linalg.norm(residual(q, sample, u)) <= opts.residual_tol:
            converged = True
            break

    res = _min_subgradient_norm(q, sample, u, tie_tol)
    return QuantileEstimate(q_hat=q, objective=objective(q, sample, u), residual_norm=res,
                            iterations=iterations, converged=converged,
                            at_datapoint=at_point, history=tuple(history))


def estimate_quantile(dataset, x, u, spec: KernelSpec,
                      opts: Optional[SolverOptions] = None, q0=None) -> QuantileEstimate:
    """Nonparametric geometric ``u``-quantile of the responses given covariate ``x``."""
    sample = weighted_sample(dataset, x, spec)
    return fit_sample(sample, u, opts, q0)
