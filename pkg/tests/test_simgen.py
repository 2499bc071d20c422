import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from stquantile.kernel import KernelSpec
from stquantile.model import direction_from_tau
from stquantile.simgen import (Setup1Params, Setup2Params, gen_var1, generate_scenario,
                               ht_quantile, ht_setup_generate, mae_mape,
                               oracle_true_quantile, scenario_config, setup1_generate,
                               setup2_generate, setup2_quantile, stream)
from stquantile.solver import estimate_quantile


class NormalModel:
    def __init__(self, mu, sd):
        self.mu, self.sd = np.atleast_1d(mu).astype(float), np.atleast_1d(sd).astype(float)

    def sample(self, x, size, rng):
        return self.mu + self.sd * rng.standard_normal((size, self.mu.size))


def _lyapunov(A, s2=1.0):
    S = np.eye(2)
    for _ in range(500):
        S = A @ S @ A.T + s2 * np.eye(2)
    return S


def test_var1_degenerate_cases():
    assert np.all(gen_var1(20, noise_sd=0.0) == 0)
    r1, r2 = stream(3, 0, 0), stream(3, 0, 0)
    np.testing.assert_array_equal(gen_var1(50, A=np.zeros((2, 2)), rng=r1),
                                  r2.standard_normal((50, 2)))
    with pytest.raises(ValueError):
        gen_var1(0)


def test_var1_matches_lyapunov():
    A = np.array([[0.2, 0.1], [-0.3, 0.4]])
    X = gen_var1(100_000, A, seed=1)
    S = np.cov(X[100:].T)
    target = _lyapunov(A)
    assert np.all(np.abs(np.diag(S) - np.diag(target)) <= 0.05 * np.diag(target))
    assert abs(S[0, 1] - target[0, 1]) <= 0.05 * math.sqrt(target[0, 0] * target[1, 1])


def test_setup1_correlation_and_diagonal():
    ds, truth = setup1_generate(Setup1Params(n=40, p=2, seed=1))
    assert math.isclose(truth.correlation()[0, 1], 0.904837, abs_tol=1e-6)
    for i in (0, 17, 39):
        x = ds.covariates[i]
        np.testing.assert_allclose(np.diag(truth.cov(x)), 0.1 * np.linalg.norm(truth.mean(x)),
                                   rtol=1e-14)
        C = truth.cov_sqrt(x)
        np.testing.assert_allclose(C @ C, truth.cov(x), atol=1e-10 * np.abs(truth.cov(x)).max())


def test_setup1_deterministic_and_seed_sensitive():
    a, _ = setup1_generate(Setup1Params(n=50, seed=4))
    b, _ = setup1_generate(Setup1Params(n=50, seed=4))
    c, _ = setup1_generate(Setup1Params(n=50, seed=5))
    assert a.responses.tobytes() == b.responses.tobytes()
    assert a.covariates.tobytes() == b.covariates.tobytes()
    assert not np.array_equal(a.responses, c.responses)


def test_setup1_replicates_independent_of_order():
    later = setup1_generate(Setup1Params(n=30, seed=0, replicate=3))[0]
    setup1_generate(Setup1Params(n=30, seed=0, replicate=1))
    again = setup1_generate(Setup1Params(n=30, seed=0, replicate=3))[0]
    np.testing.assert_array_equal(later.responses, again.responses)


def test_setup1_conditional_mean():
    ds, truth = setup1_generate(Setup1Params(n=60, seed=2))
    x = ds.covariates[30]
    draws = truth.sample(x, 10_000, stream(9, 0, 0)) - truth.mean(x)
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0)) <= 3 * se)


def test_setup1_rejects_explosive_var():
    with pytest.raises(ValueError):
        Setup1Params(var_matrix=((1.1, 0.0), (0.0, 0.2)))


def test_setup2_quantile_examples():
    assert setup2_quantile(0.0, 0.3, np.array([0.2, 0.7])) == 0.0
    assert math.isclose(setup2_quantile(1.0, 0.0, np.array([0.0, 0.0])), 1.0, rel_tol=1e-15)
    assert math.isclose(setup2_quantile(1.0, 1.0, np.array([1.0, 1.0])), 1.0, rel_tol=1e-15)
    with pytest.raises(ValueError):
        setup2_quantile(1.2, 0.5, np.array([0.1, 0.1]))
    with pytest.raises(ValueError):
        setup2_quantile(0.5, -0.1, np.array([0.1, 0.1]))
    with pytest.raises(ValueError):
        setup2_quantile(0.5, 0.5, np.array([0.1, 1.5]))


def test_setup2_quantile_monotone_in_tau():
    r = np.random.default_rng(0)
    taus = np.linspace(0, 1, 101)
    for _ in range(25):
        t, s = r.uniform(), r.uniform(size=2)
        assert np.all(np.diff(setup2_quantile(taus, t, s)) >= 0)


def test_setup2_generate_contract():
    params = Setup2Params(n=50, p=4, seed=1)
    ds, truth = setup2_generate(params)
    assert ds.times[0] == 0.0 and ds.times[-1] == 1.0
    np.testing.assert_allclose(np.diff(ds.times), 1 / 49)
    forced, _ = setup2_generate(params, uniforms=np.full(50, 0.5))
    for i in (0, 25, 49):
        np.testing.assert_allclose(forced.responses[i], truth.quantile(0.5, ds.times[i]))
    again, _ = setup2_generate(params)
    np.testing.assert_array_equal(ds.responses, again.responses)


def test_setup2_per_location_draws():
    ds, _ = setup2_generate(Setup2Params(n=200, p=3, comonotone=False, seed=2))
    co, _ = setup2_generate(Setup2Params(n=200, p=3, comonotone=True, seed=2))
    rank = lambda v: np.argsort(np.argsort(v))
    # a shared level per time couples the rank orders of the locations
    rc = np.corrcoef(rank(co.responses[:, 0]), rank(co.responses[:, 1]))[0, 1]
    rp = np.corrcoef(rank(ds.responses[:, 0]), rank(ds.responses[:, 1]))[0, 1]
    assert rc > rp


def test_ht_noiseless_structure():
    ds, _ = ht_setup_generate("covariate-homogeneity", 0.0, 80, seed=1)
    assert ds.p == 10
    np.testing.assert_array_equal(ds.responses, ds.responses[:, :1] * np.ones(10))
    dt, _ = ht_setup_generate("temporal-homogeneity", 0.0, 80, seed=1)
    assert dt.p == 3
    Z = dt.responses / dt.covariates
    np.testing.assert_allclose(Z[:, 1], -Z[:, 0], atol=1e-15)
    np.testing.assert_allclose(Z[:, 2], Z[:, 0] ** 2 - Z[:, 0], atol=1e-14)
    # the same level gives proportional rows at different times
    np.testing.assert_allclose(ht_quantile("temporal-homogeneity", 0.3, 0.5),
                               0.5 * ht_quantile("temporal-homogeneity", 0.3, 1.0))


def test_ht_noiseless_fit_is_coordinate_constant():
    ds, _ = ht_setup_generate("covariate-homogeneity", 0.0, 100, seed=0)
    spec = KernelSpec.from_data(ds.covariates)
    for tau in (0.25, 0.5, 0.9):
        q = estimate_quantile(ds, [2.0], direction_from_tau(tau, 10), spec).q_hat
        assert np.ptp(q) <= 1e-6 * max(1.0, np.abs(q).max())


def test_ht_argument_checks():
    with pytest.raises(ValueError):
        ht_setup_generate("other", 0.1)
    with pytest.raises(ValueError):
        ht_setup_generate("temporal-homogeneity", -0.1)


def test_oracle_median_of_symmetric_law():
    B = 5000
    model = NormalModel([1.0, -2.0, 0.5], [1.0, 2.0, 0.5])
    q = oracle_true_quantile(direction_from_tau(0.5, 3), None, model, B=B, seed=3)
    assert np.all(np.abs(q - model.mu) <= 3 * model.sd / math.sqrt(B) * math.sqrt(math.pi / 2))


def test_oracle_univariate_normal_quantile():
    B, tau = 5000, 0.75
    model = NormalModel(2.0, 1.5)
    q = oracle_true_quantile(direction_from_tau(tau, 1), None, model, B=B, seed=0)
    assert abs(q[0] - (2.0 + 1.5 * norm.ppf(tau))) <= 3 * 1.5 / math.sqrt(B)


def test_oracle_rate():
    model = NormalModel(0.0, 1.0)
    u = direction_from_tau(0.7, 1)
    Bs = np.array([1000, 2000, 4000, 8000])
    sds = [np.std([oracle_true_quantile(u, None, model, B=int(B), seed=s)[0] for s in range(40)])
           for B in Bs]
    slope = np.polyfit(np.log(Bs), np.log(sds), 1)[0]
    assert -0.7 <= slope <= -0.3


def test_oracle_needs_enough_draws():
    with pytest.raises(ValueError):
        oracle_true_quantile(np.zeros(1), None, NormalModel(0, 1), B=500)


def test_mae_mape_examples():
    T = np.array([[1.0, 2.0], [4.0, -3.0]])
    assert mae_mape(T, T) == (0.0, 0.0)
    mae, mape = mae_mape(1.1 * T, T)
    assert math.isclose(mape, 10.0, rel_tol=1e-12)
    mae, mape = mae_mape(np.array([2.0, 3.0, 5.0]), np.array([1.0, 2.0, 4.0]))
    assert mae == 1.0 and math.isclose(mape, 100 * 1.75 / 3, rel_tol=1e-14)
    with pytest.raises(ValueError):
        mae_mape(np.ones(3), np.ones(4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, mape, skipped = mae_mape(np.array([1.0, 1.0]), np.array([0.0, 2.0]), return_skipped=True)
    assert skipped == 1 and mape == 50.0


def test_scenarios():
    cfg = scenario_config("2", n=30, p=3, seed=4)
    ds, _ = generate_scenario(cfg, replicate=1)
    assert (ds.n, ds.p) == (30, 3)
    assert generate_scenario(scenario_config("ht-time"))[0].p == 3
    with pytest.raises(ValueError):
        scenario_config("9")
