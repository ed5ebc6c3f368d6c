import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import classical_gs
from sparsefpca.basis import make_basis, make_grid
from sparsefpca.errors import InputError, RankDeficiencyError
from sparsefpca.mgs import (mgs_gauge_check, mgs_jacobian_apply, mgs_orthonormalize,
                            sign_normalize)


def orth_err(Phi, w):
    return np.max(np.abs(Phi.T @ (w[:, None] * Phi) - np.eye(Phi.shape[1])))


def test_orthonormal_input_is_fixed():
    g = make_grid(50)
    U = classical_gs(np.random.default_rng(0).normal(size=(50, 4)), g.weights)
    np.testing.assert_allclose(mgs_orthonormalize(U, g).Phi, U, atol=1e-12)


def test_single_column():
    g = make_grid(30)
    u = np.random.default_rng(1).normal(size=30)
    Phi = mgs_orthonormalize(u, g).Phi
    np.testing.assert_allclose(Phi[:, 0], u / np.sqrt(g.weights @ u ** 2), atol=1e-14)


def test_matches_classical_gs():
    g = make_grid(20)
    U = np.random.default_rng(2).normal(size=(20, 3))
    Phi = mgs_orthonormalize(U, g).Phi
    ref = classical_gs(U, g.weights)
    for k in range(3):
        err = min(np.max(np.abs(Phi[:, k] - ref[:, k])), np.max(np.abs(Phi[:, k] + ref[:, k])))
        assert err < 1e-9


def test_qr_factor():
    g = make_grid(40)
    U = np.random.default_rng(3).normal(size=(40, 5))
    fr = mgs_orthonormalize(U, g)
    np.testing.assert_allclose(fr.Phi @ fr.R, U, atol=1e-12)
    assert np.all(np.diag(fr.R) > 0)
    np.testing.assert_allclose(np.tril(fr.R, -1), 0.0)


def test_rank_deficiency_names_column():
    g = make_grid(25)
    U = np.random.default_rng(4).normal(size=(25, 3))
    U[:, 2] = 2 * U[:, 0] - U[:, 1]
    with pytest.raises(RankDeficiencyError, match="2"):
        mgs_orthonormalize(U, g)


def test_shape_mismatch():
    with pytest.raises(InputError):
        mgs_orthonormalize(np.ones((10, 2)), make_grid(11))


def test_gauge_identity_is_exact():
    b = make_basis("bspline", 8)
    C = np.random.default_rng(5).normal(size=(8, 3))
    assert mgs_gauge_check(C, np.eye(3), b) == 0.0


def test_gauge_random_R():
    b = make_basis("bspline", 8)
    rng = np.random.default_rng(6)
    C = rng.normal(size=(8, 3))
    R = np.triu(rng.normal(size=(3, 3)))
    R[np.diag_indices(3)] = rng.uniform(0.2, 3, 3)
    assert mgs_gauge_check(C, R, b) < 1e-9


def test_gauge_negative_diagonal_flips():
    b = make_basis("fourier", 7)
    C = np.random.default_rng(7).normal(size=(7, 2))
    R = np.diag([1.0, -1.0])
    assert mgs_gauge_check(C, R, b) > 0.1


def test_jacobian_zero_direction():
    g = make_grid(15)
    U = np.random.default_rng(8).normal(size=(15, 2))
    fr = mgs_orthonormalize(U, g)
    assert np.all(mgs_jacobian_apply(U, fr, np.zeros_like(U)) == 0)


def test_jacobian_finite_differences():
    g = make_grid(15)
    rng = np.random.default_rng(9)
    U = rng.normal(size=(15, 2))
    dU = rng.normal(size=(15, 2))
    fr = mgs_orthonormalize(U, g)
    J = mgs_jacobian_apply(U, fr, dU)
    h = 1e-6
    fd = (mgs_orthonormalize(U + h * dU, g).Phi - mgs_orthonormalize(U - h * dU, g).Phi) / (2 * h)
    assert np.max(np.abs(J - fd)) / np.max(np.abs(fd)) < 1e-6


def test_jacobian_radial_direction():
    g = make_grid(15)
    rng = np.random.default_rng(10)
    U = rng.normal(size=(15, 3))
    fr = mgs_orthonormalize(U, g)
    dU = np.zeros_like(U)
    dU[:, 0] = 0.7 * U[:, 0]
    J = mgs_jacobian_apply(U, fr, dU)
    np.testing.assert_allclose(J[:, 0], 0.0, atol=1e-12)


def test_jacobian_batch_matches_single():
    g = make_grid(12)
    rng = np.random.default_rng(11)
    U = rng.normal(size=(12, 3))
    fr = mgs_orthonormalize(U, g)
    dUs = rng.normal(size=(4, 12, 3))
    batch = mgs_jacobian_apply(U, fr, dUs)
    for k in range(4):
        np.testing.assert_allclose(batch[k], mgs_jacobian_apply(U, fr, dUs[k]), atol=1e-14)
    with pytest.raises(InputError):
        mgs_jacobian_apply(U, fr, np.ones((12, 2)))


def test_sign_normalize():
    Phi = np.array([[0.1, -0.2], [-0.9, 0.3], [0.2, -0.5]])
    out, s = sign_normalize(Phi)
    np.testing.assert_allclose(s, [-1, -1])
    assert out[1, 0] == 0.9 and out[2, 1] == 0.5


frames = st.tuples(st.integers(5, 60), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=60, deadline=None)
@given(frames)
def test_orthonormality_property(args):
    M, p, seed = args
    p = min(p, M)
    g = make_grid(M)
    U = np.random.default_rng(seed).normal(size=(M, p))
    assert orth_err(mgs_orthonormalize(U, g).Phi, g.weights) < 1e-10


@settings(max_examples=40, deadline=None)
@given(frames)
def test_column_scale_invariance(args):
    M, p, seed = args
    p = min(p, M)
    g = make_grid(M)
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(M, p))
    D = rng.uniform(0.01, 100, p)
    np.testing.assert_allclose(mgs_orthonormalize(U * D, g).Phi, mgs_orthonormalize(U, g).Phi,
                               atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(frames)
def test_jacobian_linear_and_tangent(args):
    M, p, seed = args
    p = min(p, M)
    g = make_grid(M)
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(M, p))
    fr = mgs_orthonormalize(U, g)
    d1, d2 = rng.normal(size=(2, M, p))
    J1, J2 = mgs_jacobian_apply(U, fr, d1), mgs_jacobian_apply(U, fr, d2)
    np.testing.assert_allclose(mgs_jacobian_apply(U, fr, d1 + d2), J1 + J2, atol=1e-10)
    T = J1.T @ (g.weights[:, None] * fr.Phi)
    assert np.max(np.abs(T + T.T)) < 1e-8
