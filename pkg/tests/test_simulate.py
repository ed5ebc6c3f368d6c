import json

import numpy as np
import pytest

from oracles import matern_mpmath
from sparsefpca.basis import make_grid
from sparsefpca.errors import InputError
from sparsefpca.simulate import (SimSpec, bspline_field_truth, eggcrate_truth, make_truth,
                                 matern_cov, simulate_dataset, truth_bundle, write_truth)


def test_matern_zero_distance():
    assert matern_cov(0.3, 0.3, 1.0, 0.1, 4) == 1.0
    assert matern_cov(0.3, 0.3, 2.0, 0.1, 4) == 4.0


def test_matern_half_is_exponential():
    d = np.linspace(0, 1, 101)
    np.testing.assert_array_equal(matern_cov(0.0, d, 1.0, 0.2, 0.5), np.exp(-d / 0.2))
    np.testing.assert_array_equal(matern_cov(0.0, d, 1.3, 0.2, 0.5), (1.3 * 1.3) * np.exp(-d / 0.2))


def test_matern_nu4_point():
    v = matern_cov(0.0, 0.1, 1.0, 0.1, 4)
    assert abs(v - matern_mpmath(0.1, 1.0, 0.1, 4)) < 1e-8


@pytest.mark.parametrize("nu", [1, 2, 3, 1.5, 2.5])
def test_matern_other_orders(nu):
    r = np.linspace(0.01, 0.8, 17)
    ref = [matern_mpmath(x, 1.0, 0.15, nu) for x in r]
    np.testing.assert_allclose(matern_cov(0.0, r, 1.0, 0.15, nu), ref, rtol=0, atol=1e-10)


def test_matern_bad_order():
    with pytest.raises(InputError):
        matern_cov(0.0, 0.1, nu=0.3)
    with pytest.raises(InputError):
        matern_cov(0.0, 0.1, rho=0.0)


def test_eggcrate_values():
    T = eggcrate_truth()
    assert abs(T.cov(np.array([0.25]), np.array([0.25]))[0, 0] - 3.0) < 1e-12
    g = make_grid(1001)
    phi = T.eigenfunctions(g.points)
    G = phi.T @ (g.weights[:, None] * phi)
    assert np.max(np.abs(G - np.eye(3))) < 1e-6
    s = np.random.default_rng(0).uniform(size=7)
    C = T.cov(s, s)
    np.testing.assert_allclose(C, C.T, atol=1e-14)


def test_eggcrate_discretised_eigenpairs():
    T = eggcrate_truth()
    g = make_grid(401)
    sw = np.sqrt(g.weights)
    vals, vecs = np.linalg.eigh(sw[:, None] * T.cov(g.points, g.points) * sw[None, :])
    np.testing.assert_allclose(vals[::-1][:3], [1.0, 0.5, 0.25], atol=1e-6)
    phi = vecs[:, ::-1][:, :3] / sw[:, None]
    true = T.eigenfunctions(g.points)
    for k in range(3):
        err = min(np.max(np.abs(phi[:, k] - true[:, k])), np.max(np.abs(phi[:, k] + true[:, k])))
        assert err < 1e-3


def test_pow_eigenvalues():
    T = bspline_field_truth(rule="pow", seed=0)
    np.testing.assert_array_equal(T.eigenvalues, np.arange(1, 6) ** -0.6)
    # 4^-0.6 = 0.43528, so the commonly quoted 0.436 is only good to 1e-3
    np.testing.assert_allclose(T.eigenvalues, [1, 0.660, 0.517, 0.436, 0.381], atol=1e-3)


def test_spiked_eigenvalues():
    T = bspline_field_truth(rule="spiked", seed=0)
    assert T.eigenvalues[3] == 0.07
    np.testing.assert_allclose(T.eigenvalues[:3], [1, 0.66, 0.52])


@pytest.mark.parametrize("rule", ["pow", "spiked"])
def test_bspline_truth_orthonormal(rule):
    T = bspline_field_truth(rule=rule, seed=3)
    g = make_grid(1001)
    phi = T.eigenfunctions(g.points)
    assert np.max(np.abs(phi.T @ (g.weights[:, None] * phi) - np.eye(phi.shape[1]))) < 1e-8


def test_bspline_truth_errors():
    with pytest.raises(InputError):
        bspline_field_truth(rule="flat")
    with pytest.raises(InputError):
        bspline_field_truth(Q=4, rule="pow")


def test_noiseless_observations_equal_latent():
    sim = simulate_dataset(SimSpec("eggcrate", 10, 3, 6, 0.0, seed=1), eggcrate_truth())
    for s, x in zip(sim.data, sim.latent_obs):
        np.testing.assert_array_equal(s.values, x)


def test_setting3_design():
    spec = SimSpec.setting(3, seed=2)
    assert (spec.n, spec.l, spec.u, spec.sigma2) == (500, 3, 7, 0.25)
    sim = simulate_dataset(spec, eggcrate_truth())
    m = np.array([s.m for s in sim.data])
    assert m.min() >= 3 and m.max() <= 7 and sim.data.n == 500
    with pytest.raises(InputError):
        SimSpec.setting(4)


def test_deterministic():
    a = simulate_dataset(SimSpec("eggcrate", 15, 3, 9, 1.0, seed=5), eggcrate_truth())
    b = simulate_dataset(SimSpec("eggcrate", 15, 3, 9, 1.0, seed=5), eggcrate_truth())
    for s, r in zip(a.data, b.data):
        assert s.times.tobytes() == r.times.tobytes() and s.values.tobytes() == r.values.tobytes()
    assert a.latent_ref.tobytes() == b.latent_ref.tobytes()


def test_sample_covariance_monte_carlo():
    # two reference points, many subjects; compare with the truth within 3 SE
    T = eggcrate_truth()
    ref = np.array([0.2, 0.7])
    sim = simulate_dataset(SimSpec("eggcrate", 20000, 1, 1, 0.0, seed=7), T, ref_grid=ref)
    X = sim.latent_ref - T.mean(ref)
    emp = X[:, 0] @ X[:, 1] / X.shape[0]
    truth = T.cov(ref, ref)
    se = np.sqrt((truth[0, 0] * truth[1, 1] + truth[0, 1] ** 2) / X.shape[0])
    assert abs(emp - truth[0, 1]) < 3 * se


def test_noise_variance():
    sim = simulate_dataset(SimSpec("eggcrate", 400, 5, 15, 0.25, seed=3), eggcrate_truth())
    e = np.concatenate([s.values - x for s, x in zip(sim.data, sim.latent_obs)])
    se = 0.25 * np.sqrt(2 / e.size)
    assert abs(e.var() - 0.25) < 4 * se


def test_matern_truth_runs_and_eigen():
    T = make_truth("matern")
    sim = simulate_dataset(SimSpec("matern", 5, 3, 5, 0.1, seed=0), T)
    lam, phi = T.eigen_on(sim.ref_grid)
    assert np.all(np.diff(lam) <= 0) and lam[0] > 0
    assert phi.shape == (50, 10)


def test_truth_bundle(tmp_path):
    sim = simulate_dataset(SimSpec("eggcrate", 4, 3, 5, 1.0, seed=0), eggcrate_truth())
    write_truth(sim, tmp_path / "t.json")
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["eigenvalues"] == [1.0, 0.5, 0.25]
    assert len(doc["grid"]) == 50 and len(doc["eigenfunctions"]) == 3
    assert truth_bundle(sim)["sigma2"] == 1.0


def test_bad_spec():
    with pytest.raises(InputError):
        SimSpec("eggcrate", 10, 5, 3, 1.0)
    with pytest.raises(InputError):
        make_truth("brownian")
