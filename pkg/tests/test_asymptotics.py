import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import gumbel_critical, gumbel_critical_mp, norming_mp
from stquantile.asymptotics import (building_blocks, check_grid, critical_multiplier,
                                    default_grid, gaussian_approx, location_bands,
                                    norming_constant, plug_in_cache, plug_in_gp,
                                    simultaneous_band, thin_grid, write_band_csv)
from stquantile.kernel import KernelSpec
from stquantile.model import SolverOptions, direction_from_tau
from stquantile.simgen import Setup1Params, Setup2Params, setup1_generate, setup2_generate


def _random_psd(r, p):
    A = r.normal(size=(p, p))
    return A @ A.T


def test_blocks_hand_example():
    blocks = building_blocks(np.zeros(2), [[1.0, 0.0]], np.eye(2)[None], np.eye(2)[None])
    np.testing.assert_allclose(blocks.eta_i[0], [1, 0])
    np.testing.assert_allclose(blocks.V1_i[0], np.eye(2))
    np.testing.assert_allclose(blocks.V2_i[0], np.diag([0.0, 1.0]))
    np.testing.assert_allclose(blocks.V2_i[0] @ blocks.eta_i[0], [0, 0])


def test_masked_time_has_zero_blocks():
    K = np.stack([np.eye(2), np.zeros((2, 2))])
    blocks = building_blocks(np.zeros(2), [[1.0, 2.0], [3.0, 1.0]], np.stack([np.eye(2)] * 2), K)
    for arr in (blocks.eta_i, blocks.V1_i, blocks.V2_i):
        assert np.all(arr[1] == 0)


def test_guarded_time_is_reported():
    blocks = building_blocks(np.zeros(2), [[1.0, 0.0], [0.0, 0.0]], np.stack([np.eye(2)] * 2),
                             np.stack([np.eye(2)] * 2))
    assert blocks.diagnostics["guarded"] == 1
    assert np.all(blocks.V2_i[1] == 0)


def test_v2_annihilates_eta(rng):
    n, p = 12, 4
    K = np.stack([_random_psd(rng, p) / 5 for _ in range(n)])
    S = np.stack([_random_psd(rng, p) for _ in range(n)])
    blocks = building_blocks(rng.normal(size=p), rng.normal(size=(n, p)), S, K)
    for V2, eta in zip(blocks.V2_i, blocks.eta_i):
        np.testing.assert_allclose(V2 @ eta, 0, atol=1e-12)


def test_identity_kernels_give_zero_eta_t(rng):
    n, p = 9, 3
    blocks = building_blocks(rng.normal(size=p), rng.normal(size=(n, p)),
                             np.stack([np.eye(p)] * n), np.stack([np.eye(p)] * n))
    g = gaussian_approx(blocks, n, p, 0.3)
    np.testing.assert_allclose(g.eta_t, 0, atol=1e-15)
    np.testing.assert_allclose(g.mu_q, 0, atol=1e-12)


def test_omega_hand_example():
    b = 0.3
    blocks = building_blocks(np.zeros(2), [[1.0, 0.0]], np.eye(2)[None], np.eye(2)[None])
    g = gaussian_approx(blocks, 1, 2, b)
    np.testing.assert_allclose(g.omega_t, np.diag([0.0, 1.0]) / (4 * b * b), rtol=1e-14)
    assert g.diagnostics["psi_repaired"]


def test_aggregates_match_direct_sums(rng):
    n, p, b = 7, 3, 0.4
    K = np.stack([_random_psd(rng, p) / 4 for _ in range(n)])
    S = np.stack([_random_psd(rng, p) for _ in range(n)])
    mu, q0 = rng.normal(size=(n, p)), rng.normal(size=p)
    g = gaussian_approx(building_blocks(q0, mu, S, K), n, p, b)
    eta_t, omega, psi = np.zeros(p), np.zeros((p, p)), np.zeros((p, p))
    for i in range(n):
        d = mu[i] - q0
        eta = K[i] @ d
        r = np.linalg.norm(eta)
        V2 = np.eye(p) / r - np.outer(eta, eta) / r ** 3
        eta_t += K[i] @ (d / np.linalg.norm(d) - eta / r)
        omega += K[i] @ V2 @ (K[i] @ S[i] @ K[i]) @ V2.T @ K[i]
        psi += K[i] @ V2 @ K[i]
    np.testing.assert_allclose(g.eta_t, eta_t / (n * p * b), atol=1e-12)
    np.testing.assert_allclose(g.omega_t, omega / (n * p * b) ** 2, atol=1e-12)
    np.testing.assert_allclose(g.psi_t, psi / n, atol=1e-12)
    np.testing.assert_allclose(g.psi_t, g.psi_t.T, atol=1e-12)
    assert np.linalg.eigvalsh(g.omega_t).min() >= -1e-10
    inv = np.linalg.inv(g.psi_t)
    np.testing.assert_allclose(g.sigma_q, inv @ g.omega_t @ inv, atol=1e-12)
    np.testing.assert_allclose(g.mu_q, inv @ g.eta_t, atol=1e-12)


def test_plug_in_on_setup1_is_psd():
    ds, _ = setup1_generate(Setup1Params(n=80, seed=5))
    spec = KernelSpec.for_sample_size(ds.n).compactified()
    cache = plug_in_cache(ds, spec)
    for i in (10, 40, 70):
        g = plug_in_gp(ds, ds.covariates[i], direction_from_tau(0.75, ds.p), spec, cache=cache)
        np.testing.assert_allclose(g.sigma_q, g.sigma_q.T, atol=1e-12)
        assert np.linalg.eigvalsh(g.sigma_q).min() >= -1e-10 * max(1.0, np.abs(g.sigma_q).max())
        assert np.linalg.eigvalsh(g.omega_t).min() >= -1e-10 * max(1.0, np.abs(g.omega_t).max())
        for V2, eta in zip(g.V2_i, g.eta_i):
            np.testing.assert_allclose(V2 @ eta, 0, atol=1e-12 * max(1.0, np.linalg.norm(eta)))


def test_identical_rows_make_psi_degenerate():
    from conftest import make_dataset
    ds = make_dataset(np.tile([[1.0, 2.0, 3.0]], (30, 1)))
    spec = KernelSpec(bandwidth=0.2)
    with pytest.raises(np.linalg.LinAlgError):
        plug_in_gp(ds, [0.5], direction_from_tau(0.5, 3), spec,
                   cache=plug_in_cache(ds, spec, covariance="identity"))


def test_unknown_covariance_option():
    ds, _ = setup2_generate(Setup2Params(n=20, p=2))
    with pytest.raises(ValueError):
        plug_in_cache(ds, KernelSpec(), covariance="bogus")


# ------------------------------------------------------------- norming & grid

def test_norming_constant_examples():
    t = math.exp(math.e)
    assert math.isclose(norming_constant(t, 0.0), norming_mp(math.e, 0.0), abs_tol=1e-12)
    assert math.isclose(norming_constant(t, 0.0), -0.757196, abs_tol=1e-6)
    z0 = 0.5 * (math.log(math.log(50)) + math.log(4 * math.pi))
    assert abs(norming_constant(50, z0)) < 1e-15
    assert norming_constant(50, 1.0) > norming_constant(50, 0.0)
    with pytest.raises(ValueError):
        norming_constant(math.e, 1.0)


def test_norming_constant_affine_and_decreasing_in_t():
    for t in (5.0, 20.0, 300.0, 1e4):
        a, b, c = (norming_constant(t, z) for z in (0.0, 1.0, 2.0))
        assert math.isclose(c - b, b - a, rel_tol=1e-12)
    for z in (3.0, 5.0, 8.0):
        ts = [t for t in np.geomspace(5, 1e5, 30)
              if z > 0.5 * (math.log(math.log(t)) + math.log(4 * math.pi))]
        vals = [norming_constant(t, z) for t in ts]
        assert np.all(np.diff(vals) < 0)


def test_critical_multiplier_closed_form():
    assert math.isclose(critical_multiplier(0.05, 100), gumbel_critical_mp(0.05, 100), abs_tol=1e-12)
    for a in (0.01, 0.05, 0.1):
        for m in (3, 10, 1000):
            assert math.isclose(critical_multiplier(a, m), gumbel_critical(a, m), rel_tol=1e-13)


def test_thin_grid_spacing():
    g = thin_grid(np.linspace(0, 1, 101), 0.1)
    assert np.all(np.diff(g[:, 0]) > 0.2)
    check_grid(g, 0.1)
    with pytest.raises(ValueError):
        check_grid([[0.0], [0.1], [0.5]], 0.1)
    with pytest.raises(ValueError):
        check_grid([[0.0], [1.0]], 0.1)


def test_default_grid_starts_at_anchor():
    x = np.linspace(0, 1, 200)
    g = default_grid(x, 0.05, anchor=1.0)
    assert g[0, 0] == 1.0
    check_grid(g, 0.05)


# ------------------------------------------------------------------- bands

@pytest.fixture(scope="module")
def setup2_small():
    ds, truth = setup2_generate(Setup2Params(n=120, p=4, seed=2))
    spec = KernelSpec.from_data(ds.covariates)
    return ds, truth, spec, default_grid(ds.covariates, spec.bandwidth)


def test_band_symmetric_and_monotone_in_alpha(setup2_small):
    ds, _, spec, grid = setup2_small
    l = np.ones(2) / math.sqrt(2)
    wide = simultaneous_band(ds, grid, 0.5, l, [0, 1], 0.01, spec)
    narrow = simultaneous_band(ds, grid, 0.5, l, [0, 1], 0.10, spec)
    np.testing.assert_allclose(wide.upper - wide.center, wide.center - wide.lower, atol=1e-12)
    assert np.all(wide.upper - wide.lower >= narrow.upper - narrow.lower)
    np.testing.assert_allclose(wide.center, narrow.center)


def test_band_width_scales_with_bandwidth_factor(setup2_small):
    ds, _, spec, grid = setup2_small
    b = location_bands(ds, grid, 0.5, 0.1, spec, locations=[0])[0]
    m = len(grid)
    # half-width / (C p b) is the plug-in standard deviation, positive
    sd = (b.upper - b.center) / (critical_multiplier(0.1, m) * ds.p * spec.bandwidth)
    assert np.all(sd >= 0)


def test_band_rejects_bad_contrast(setup2_small):
    ds, _, spec, grid = setup2_small
    with pytest.raises(ValueError):
        simultaneous_band(ds, grid, 0.5, [1.0, 1.0], [0, 1], 0.1, spec)


def test_band_rejects_crowded_grid(setup2_small):
    ds, _, spec, _ = setup2_small
    with pytest.raises(ValueError):
        simultaneous_band(ds, [[0.1], [0.12], [0.5]], 0.5, [1.0], [0], 0.1, spec)


def test_band_csv(tmp_path, setup2_small):
    ds, _, spec, grid = setup2_small
    bands = location_bands(ds, grid, 0.5, 0.1, spec)
    write_band_csv(tmp_path / "b.csv", bands, ds.locations, comment="hdr")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "x_index,location,center,lower,upper"
    assert len(lines) == 2 + len(grid) * ds.p


def test_band_coverage_setup2():
    hits = []
    for r in range(50):
        ds, truth = setup2_generate(Setup2Params(seed=0, replicate=r))
        spec = KernelSpec.from_data(ds.covariates)
        grid = default_grid(ds.covariates, spec.bandwidth)
        band = location_bands(ds, grid, 0.5, 0.10, spec, locations=[0])[0]
        target = np.array([truth.quantile(0.5, g[0])[0] for g in grid])
        hits.append(np.all((band.lower <= target) & (target <= band.upper)))
    assert 0.75 <= np.mean(hits) <= 1.0
