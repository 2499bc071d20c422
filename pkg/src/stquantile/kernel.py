"""Matrix-valued kernels ``K(x, X(t)) = c_n^{-1} Kc((x - X(t)) / b_n)``.

The scalar profile ``k`` satisfies ``k(0) = 1`` and the matrix kernel is
``Kc(z) = c_n k(z) S`` with ``S`` either the identity or a spatial taper,
so the normalized matrix equals ``k(z) S`` and ``K(x, x) = S``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

__all__ = [
    "KernelSpec",
    "default_bandwidth",
    "default_normalizer",
    "scaled_bandwidth",
    "default_theta",
    "profile",
    "kernel_weights",
    "kernel_matrix",
    "structure_matrix",
    "nearest_psd",
    "cross_validate_bandwidth",
]

FAMILIES = ("gaussian", "epanechnikov")
STRUCTURES = ("identity", "taper")


def default_bandwidth(n: int) -> float:
    """``b_n = n^{-1/5}``."""
    if n < 2:
        raise ValueError("bandwidth rule needs n >= 2")
    return float(n) ** -0.2


def default_normalizer(n: int, b_n: float) -> float:
    """``c_n = sqrt(n b_n)``."""
    if n < 2:
        raise ValueError("normalizer needs n >= 2")
    if not b_n > 0:
        raise ValueError("bandwidth must be positive")
    return math.sqrt(n * b_n)


def scaled_bandwidth(covariates) -> float:
    """``n^{-1/5}`` times the smallest covariate standard deviation.

    The plain rule assumes unit-scale covariates; this variant follows the
    tightest covariate direction instead.
    """
    X = np.asarray(covariates, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    sd = X.std(axis=0)
    sd = sd[sd > 0]
    if sd.size == 0:
        raise ValueError("covariates are constant")
    return default_bandwidth(X.shape[0]) * float(sd.min())


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, bandwidth ``b_n``, normalizer ``c_n`` and matrix structure.

    ``truncate`` zeroes the gaussian profile outside the unit ball; the
    epanechnikov profile is compactly supported regardless. ``theta`` is the
    decay rate of the taper ``exp(-theta * dist^2)``; ``None`` picks the rate
    at which the taper equals 1/2 at the median pairwise distance.
    """

    family: str = "gaussian"
    bandwidth: float = 0.5
    normalizer: float = 1.0
    structure: str = "identity"
    theta: Optional[float] = None
    truncate: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown kernel structure {self.structure!r}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.normalizer > 0:
            raise ValueError("normalizer must be positive")
        if self.theta is not None and not self.theta > 0:
            raise ValueError("theta must be positive")

    @classmethod
    def for_sample_size(cls, n: int, family: str = "gaussian", bandwidth=None, **kw) -> "KernelSpec":
        """Spec with ``c_n = sqrt(n b_n)``; ``bandwidth`` defaults to ``n^{-1/5}``."""
        b = default_bandwidth(n) if bandwidth in (None, "auto") else float(bandwidth)
        return cls(family=family, bandwidth=b, normalizer=default_normalizer(n, b), **kw)

    @classmethod
    def from_data(cls, covariates, family: str = "gaussian", **kw) -> "KernelSpec":
        """Spec with the :func:`scaled_bandwidth` rule."""
        X = np.asarray(covariates, dtype=float)
        return cls.for_sample_size(X.shape[0], family, scaled_bandwidth(X), **kw)

    @property
    def compact(self) -> bool:
        return self.family == "epanechnikov" or self.truncate

    def compactified(self) -> "KernelSpec":
        """Same spec with exact compact support on the unit ball."""
        return self if self.compact else replace(self, truncate=True)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, config: dict) -> "KernelSpec":
        known = {k: config[k] for k in ("family", "bandwidth", "normalizer", "structure",
                                        "theta", "truncate") if k in config}
        return cls(**known)


def profile(family: str, z2, truncate: bool = False):
    """Scalar profile evaluated at squared scaled distances ``z2``."""
    z2 = np.asarray(z2, dtype=float)
    if family == "gaussian":
        k = np.exp(-0.5 * z2)
        return np.where(z2 <= 1.0, k, 0.0) if truncate else k
    if family == "epanechnikov":
        return np.where(z2 <= 1.0, 1.0 - z2, 0.0)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_weights(spec: KernelSpec, x, covariates) -> np.ndarray:
    """Scalar weights ``k((x - X(t_i)) / b_n)`` for every row of ``covariates``."""
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != X.shape[1]:
        raise ValueError(f"covariate dimension mismatch: {x.size} vs {X.shape[1]}")
    z2 = np.sum(((X - x) / spec.bandwidth) ** 2, axis=1)
    return profile(spec.family, z2, spec.truncate)


def nearest_psd(A, floor: float = 0.0) -> np.ndarray:
    """Symmetrize and clip eigenvalues below ``floor``."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w.min() >= floor:
        return A
    return (V * np.maximum(w, floor)) @ V.T


def default_theta(coords) -> float:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.sum(diff ** 2, axis=-1)[np.triu_indices(len(coords), k=1)]
    med = float(np.median(d2)) if d2.size else 0.0
    return math.log(2.0) / med if med > 0 else 1.0


def structure_matrix(spec: KernelSpec, p: int, coords=None) -> Optional[np.ndarray]:
    """``None`` for the identity structure, otherwise the PSD taper matrix."""
    if spec.structure == "identity":
        return None
    if coords is None:
        raise ValueError("the spatial taper needs location coordinates")
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (p, 2):
        raise ValueError("coords must be a (p, 2) array")
    theta = spec.theta if spec.theta is not None else default_theta(coords)
    diff = coords[:, None, :] - coords[None, :, :]
    T = np.exp(-theta * np.sum(diff ** 2, axis=-1))
    return nearest_psd(T)


def kernel_matrix(spec: KernelSpec, x, x_t, p: int, coords=None) -> np.ndarray:
    """The normalized ``p x p`` kernel matrix ``K(x, x_t)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    if x.shape != x_t.shape:
        raise ValueError("x and x_t must have the same dimension")
    k = float(kernel_weights(spec, x, x_t[None, :])[0])
    # c_n^{-1} * (c_n k S): the normalizer cancels so that K(x, x) = S
    scaled = (k * spec.normalizer) / spec.normalizer
    S = structure_matrix(spec, p, coords)
    return scaled * (np.eye(p) if S is None else S)


def cross_validate_bandwidth(dataset, tau: float, candidates, holdout: float = 0.2,
                             family: str = "gaussian", opts=None) -> float:
    """Pick the bandwidth with the smallest held-out geometric check loss.

    The last ``holdout`` fraction of time points is predicted from the rest,
    one fit per held-out covariate row.
    """
    from .model import direction_from_tau
    from .solver import estimate_quantile

    n = dataset.n
    split = int(round(n * (1 - holdout)))
    if not 2 <= split < n:
        raise ValueError("holdout leaves no training or test rows")
    train = dataset.head(split)
    direction = direction_from_tau(tau, dataset.p)
    best, best_loss = None, math.inf
    for b in candidates:
        spec = KernelSpec.for_sample_size(split, family=family, bandwidth=b)
        loss = 0.0
        for i in range(split, n):
            try:
                fit = estimate_quantile(train, dataset.covariates[i], direction, spec, opts)
            except np.linalg.LinAlgError:
                loss = math.inf
                break
            r = dataset.responses[i] - fit.q_hat
            loss += np.linalg.norm(r) + direction.u @ r
        if loss < best_loss:
            best, best_loss = float(b), loss
    if best is None:
        raise ValueError("no candidate bandwidth produced finite loss")
    return best
