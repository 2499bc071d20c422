"""Seeded simulation designs with known conditional quantiles.

Every random draw comes from a Philox stream keyed by
``(seed, replicate, component)``, so datasets do not depend on the order in
which replicates or components are generated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import QuantileDirection, SolverOptions, SpatioTemporalDataset
from .solver import WeightedSample, fit_sample

__all__ = [
    "Setup1Params",
    "Setup1Truth",
    "Setup2Params",
    "Setup2Truth",
    "HTTruth",
    "stream",
    "gen_var1",
    "setup1_generate",
    "setup2_quantile",
    "setup2_generate",
    "ht_setup_generate",
    "ht_quantile",
    "oracle_true_quantile",
    "mae_mape",
    "scenario_config",
    "generate_scenario",
]

# stream components
_COVARIATES, _COEFFS, _NOISE, _LOCATIONS, _UNIFORMS, _MEASUREMENT = range(6)


def stream(seed: int, replicate: int = 0, component: int = 0) -> np.random.Generator:
    """Independent Philox generator for one ``(seed, replicate, component)`` cell."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(component)))
    return np.random.Generator(np.random.Philox(ss))


def gen_var1(n: int, A=((0.2, 0.1), (-0.3, 0.4)), noise_sd: float = 1.0,
             seed: int = 0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Bivariate VAR(1) path started at zero: ``X(t) = A X(t-1) + w_t``.

    Row ``t - 1`` of the result holds ``X(t)`` for ``t = 1..n``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    A = np.asarray(A, dtype=float)
    rng = rng if rng is not None else stream(seed, 0, _COVARIATES)
    w = noise_sd * rng.standard_normal((n, A.shape[0]))
    X = np.zeros((n, A.shape[0]))
    prev = np.zeros(A.shape[0])
    for t in range(n):
        prev = A @ prev + w[t]
        X[t] = prev
    return X


# ---------------------------------------------------------------- setup 1

@dataclass(frozen=True)
class Setup1Params:
    """VAR(1)-driven design with a linear trend and periodic covariate effects.

    The trend enters through the integer time index ``t = 1..n``; the
    dataset's covariate rows are ``(t / n, X_1(t), X_2(t))`` so that the
    kernel localizes in time as well as in the covariate.
    """

    n: int = 300
    p: int = 10
    seed: int = 0
    replicate: int = 0
    var_matrix: tuple = ((0.2, 0.1), (-0.3, 0.4))
    var_noise_sd: float = 1.0
    noise_scale: float = 0.1
    spatial_decay: float = 0.1

    def __post_init__(self):
        A = np.asarray(self.var_matrix, dtype=float)
        if A.shape != (2, 2):
            raise ValueError("var_matrix must be 2 x 2")
        if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
            raise ValueError("var_matrix must have spectral radius below 1")
        if self.n < 2 or self.p < 1:
            raise ValueError("need n >= 2 and p >= 1")


@dataclass(frozen=True, eq=False)
class Setup1Truth:
    """Conditional law of ``Y | X = x`` for setup 1.

    Covariate rows are ``(t / n, X_1, X_2)`` as stored in the dataset.
    """

    alpha: np.ndarray
    beta: np.ndarray          # (3, p): trend, sine and cosine loadings
    n: int
    noise_scale: float = 0.1
    spatial_decay: float = 0.1

    @property
    def p(self) -> int:
        return self.alpha.size

    def correlation(self) -> np.ndarray:
        s = np.arange(1, self.p + 1, dtype=float)
        return np.exp(-self.spatial_decay * (s[:, None] - s[None, :]) ** 2)

    def mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = x[0] * self.n
        return (self.alpha + self.beta[0] * t + self.beta[1] * math.sin(2 * math.pi * x[1])
                + self.beta[2] * math.cos(2 * math.pi * x[2]))

    def cov(self, x) -> np.ndarray:
        return self.noise_scale * np.linalg.norm(self.mean(x)) * self.correlation()

    def cov_sqrt(self, x) -> np.ndarray:
        w, V = np.linalg.eigh(self.cov(x))
        return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T

    def sample(self, x, size: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((size, self.p))
        return self.mean(x) + z @ self.cov_sqrt(x)

    def to_dict(self) -> dict:
        return {"setup": "1", "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "n": self.n, "noise_scale": self.noise_scale,
                "spatial_decay": self.spatial_decay}


def setup1_generate(params: Setup1Params = Setup1Params()):
    """Simulate setup 1; returns ``(dataset, truth)``."""
    n, p = params.n, params.p
    X = gen_var1(n, params.var_matrix, params.var_noise_sd,
                 rng=stream(params.seed, params.replicate, _COVARIATES))
    rc = stream(params.seed, params.replicate, _COEFFS)
    alpha = rc.standard_normal(p)
    beta = np.vstack([rc.uniform(-1, 1, p), rc.uniform(-20, 20, p), rc.uniform(-20, 20, p)])
    truth = Setup1Truth(alpha, beta, n, params.noise_scale, params.spatial_decay)
    t = np.arange(1, n + 1)
    cov_rows = np.column_stack([t / n, X])
    Z = stream(params.seed, params.replicate, _NOISE).standard_normal((n, p))
    Y = np.empty((n, p))
    for i in range(n):
        Y[i] = truth.mean(cov_rows[i]) + Z[i] @ truth.cov_sqrt(cov_rows[i])
    ds = SpatioTemporalDataset(t / n, Y, cov_rows, [f"s{j + 1}" for j in range(p)],
                               np.column_stack([np.arange(1, p + 1), np.zeros(p)]))
    return ds, truth


# ---------------------------------------------------------------- setup 2

def _check_unit(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return v


def setup2_quantile(tau, t, s):
    """``Q(tau | t, s) = t xi_1(tau, s) + (1 - t) xi_2(tau, s)``; broadcasts."""
    tau, t = _check_unit("tau", tau), _check_unit("t", t)
    s = _check_unit("s", s)
    s1, s2 = s[..., 0], s[..., 1]
    xi1 = (1 - (s1 + s2) / 2) * tau ** 2 + s1 * np.log1p(tau) / (2 * math.log(2)) + s2 / 2 * tau ** 3
    xi2 = (1 - s2 ** 2) * np.sin(tau * math.pi / 2) + s2 * np.expm1(tau) / (math.e - 1)
    return t * xi1 + (1 - t) * xi2


@dataclass(frozen=True)
class Setup2Params:
    n: int = 200
    p: int = 15
    seed: int = 0
    replicate: int = 0
    comonotone: bool = True

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ValueError("need n >= 2 and p >= 1")


@dataclass(frozen=True, eq=False)
class Setup2Truth:
    """Closed-form quantile curves at fixed locations; covariate is time."""

    coords: np.ndarray
    comonotone: bool = True

    def quantile(self, tau, t) -> np.ndarray:
        return setup2_quantile(tau, t, self.coords)

    def sample(self, x, size: int, rng: np.random.Generator) -> np.ndarray:
        t = float(np.atleast_1d(x)[0])
        p = len(self.coords)
        U = rng.uniform(size=(size, 1) if self.comonotone else (size, p))
        return setup2_quantile(np.broadcast_to(U, (size, p)), t, self.coords)

    def to_dict(self) -> dict:
        return {"setup": "2", "coords": self.coords.tolist(), "comonotone": self.comonotone}


def setup2_generate(params: Setup2Params = Setup2Params(), uniforms=None):
    """Simulate setup 2 by inverse-CDF sampling; returns ``(dataset, truth)``.

    ``uniforms`` overrides the random levels: shape ``(n,)`` in the
    comonotone case, ``(n, p)`` otherwise.
    """
    n, p = params.n, params.p
    coords = stream(params.seed, params.replicate, _LOCATIONS).uniform(size=(p, 2))
    if uniforms is None:
        ru = stream(params.seed, params.replicate, _UNIFORMS)
        uniforms = ru.uniform(size=n) if params.comonotone else ru.uniform(size=(n, p))
    U = np.asarray(uniforms, dtype=float)
    U = np.broadcast_to(U[:, None], (n, p)) if U.ndim == 1 else U
    t = np.linspace(0.0, 1.0, n)
    Y = setup2_quantile(U, t[:, None], coords)
    truth = Setup2Truth(coords, params.comonotone)
    ds = SpatioTemporalDataset(t, Y, t[:, None], [f"s{j + 1}" for j in range(p)], coords)
    return ds, truth


# ------------------------------------------------------- hypothesis-test setups

HT_KINDS = ("covariate-homogeneity", "temporal-homogeneity")


def ht_quantile(kind: str, level, x) -> np.ndarray:
    """Noise-free quantile curves of the two homogeneity designs.

    ``level`` is the uniform draw in [0, 1]; the covariate design maps it to
    its parameter in [-1, 1] through ``2 level - 1``.
    """
    level = np.asarray(level, dtype=float)
    x = np.asarray(x, dtype=float)
    if kind == "covariate-homogeneity":
        a = 2 * level - 1
        val = -0.1 + x + 0.1 * x ** 2 + a * np.abs(x)
        return np.multiply.outer(val, np.ones(10))
    if kind == "temporal-homogeneity":
        return np.stack([x * level, -x * level, x * (level ** 2 - level)], axis=-1)
    raise ValueError(f"unknown kind {kind!r}")


@dataclass(frozen=True, eq=False)
class HTTruth:
    kind: str
    sigma: float

    def sample(self, x, size: int, rng: np.random.Generator) -> np.ndarray:
        x0 = float(np.atleast_1d(x)[0])
        Y = ht_quantile(self.kind, rng.uniform(size=size), np.full(size, x0))
        return Y + self.sigma * rng.standard_normal(Y.shape)

    def to_dict(self) -> dict:
        return {"setup": "ht-cov" if self.kind == HT_KINDS[0] else "ht-time", "sigma": self.sigma}


def ht_setup_generate(kind: str, sigma: float, n: int = 100, seed: int = 0,
                      replicate: int = 0):
    """Simulate a homogeneity design; returns ``(dataset, truth)``.

    ``covariate-homogeneity``: ``p = 10``, covariate ``X ~ N(0, 10^2)``.
    ``temporal-homogeneity``: ``p = 3``, covariate ``t_i = i / n`` on (0, 1].
    Each row evaluates the quantile curve at one uniform draw, then adds
    ``N(0, sigma^2)`` noise per coordinate.
    """
    if kind not in HT_KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if n < 2:
        raise ValueError("n must be at least 2")
    times = np.arange(1, n + 1) / n
    if kind == HT_KINDS[0]:
        x = 10.0 * stream(seed, replicate, _COVARIATES).standard_normal(n)
    else:
        x = times
    U = stream(seed, replicate, _UNIFORMS).uniform(size=n)
    Y = ht_quantile(kind, U, x)
    Y = Y + sigma * stream(seed, replicate, _MEASUREMENT).standard_normal(Y.shape)
    p = Y.shape[1]
    ds = SpatioTemporalDataset(times, Y, x[:, None], [f"s{j + 1}" for j in range(p)])
    return ds, HTTruth(kind, float(sigma))


# ----------------------------------------------------------------- oracle & metrics

def oracle_true_quantile(u, x, model, B: int = 5000, seed: int = 0,
                         opts: Optional[SolverOptions] = None) -> np.ndarray:
    """Monte Carlo geometric quantile of ``Y | X = x``.

    Draws ``B`` conditional samples from ``model.sample`` and minimizes their
    unweighted geometric check loss with the IRLS solver.
    """
    if B < 1000:
        raise ValueError("the oracle needs B >= 1000 draws")
    u = u.u if isinstance(u, QuantileDirection) else np.asarray(u, dtype=float)
    Y = model.sample(x, B, stream(seed, 0, _MEASUREMENT + 1))
    fit = fit_sample(WeightedSample(Y, np.ones(B)), u, opts)
    if not fit.converged:
        raise RuntimeError("oracle solver did not converge")
    return fit.q_hat


def mae_mape(estimates, truths, return_skipped: bool = False):
    """Mean absolute error and mean absolute percentage error.

    Truth entries with magnitude below 1e-12 are left out of the MAPE; pass
    ``return_skipped=True`` to receive their count as a third value.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    err = np.abs(est - tru)
    mae = float(err.mean())
    keep = np.abs(tru) >= 1e-12
    skipped = int(np.sum(~keep))
    if skipped:
        warnings.warn(f"MAPE skips {skipped} near-zero truth entries", RuntimeWarning)
    mape = float(100 * np.mean(err[keep] / np.abs(tru[keep]))) if keep.any() else float("nan")
    return (mae, mape, skipped) if return_skipped else (mae, mape)


# ---------------------------------------------------------------- scenarios

_DEFAULT_NP = {"1": (300, 10), "2": (200, 15), "ht-cov": (100, 10), "ht-time": (100, 3)}


def scenario_config(setup: str, n: Optional[int] = None, p: Optional[int] = None,
                    seed: int = 0, sigma: float = 0.1, comonotone: bool = True,
                    **overrides) -> dict:
    """Scenario description in its JSON form."""
    if setup not in _DEFAULT_NP:
        raise ValueError(f"unknown setup {setup!r}")
    n0, p0 = _DEFAULT_NP[setup]
    config = {"setup": setup, "n": int(n or n0), "p": int(p or p0), "seed": int(seed),
              "sigma": float(sigma), "comonotone": bool(comonotone)}
    config.update(overrides)
    return config


def generate_scenario(config: dict, replicate: int = 0):
    """Dataset and truth handle for a scenario config."""
    setup = config["setup"]
    seed, n, p = config["seed"], config["n"], config["p"]
    if setup == "1":
        return setup1_generate(Setup1Params(n=n, p=p, seed=seed, replicate=replicate))
    if setup == "2":
        return setup2_generate(Setup2Params(n=n, p=p, seed=seed, replicate=replicate,
                                            comonotone=config.get("comonotone", True)))
    if setup in ("ht-cov", "ht-time"):
        kind = HT_KINDS[0] if setup == "ht-cov" else HT_KINDS[1]
        return ht_setup_generate(kind, config.get("sigma", 0.1), n, seed, replicate)
    raise ValueError(f"unknown setup {setup!r}")
