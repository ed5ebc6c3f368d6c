"""Weighted modified Gram-Schmidt map and its directional derivative.

The map takes an M x p matrix ``U`` of function values on a quadrature
grid to ``Phi`` with ``Phi.T @ diag(w) @ Phi = I``. Column ``k`` of
``Phi`` depends on columns ``0..k`` of ``U`` only, and ``U = Phi @ R``
with ``R`` upper triangular with positive diagonal (a weighted thin QR).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, RankDeficiencyError

RANK_TOL = 1e-12


def _weights(grid):
    return np.asarray(getattr(grid, "weights", grid), dtype=float)


@dataclass(frozen=True)
class OrthoFrame:
    """Output of :func:`mgs_orthonormalize`.

    Attributes
    ----------
    Phi : ndarray, shape (M, p)
        W-orthonormal columns.
    R : ndarray, shape (p, p)
        Upper-triangular factor, ``U = Phi @ R``; ``R[k, k]`` is the
        weighted norm of the k-th orthogonal residual ``w_k``.
    weights : ndarray, shape (M,)
    """

    Phi: np.ndarray
    R: np.ndarray
    weights: np.ndarray

    @property
    def residuals(self):
        """The orthogonal (unnormalised) columns ``w_k = R[k, k] phi_k``."""
        return self.Phi * np.diag(self.R)


def mgs_orthonormalize(U, grid):
    """Orthonormalise the columns of ``U`` in the weighted inner product.

    Parameters
    ----------
    U : array_like, shape (M, p)
    grid : QuadratureGrid or array_like
        Supplies the quadrature weights ``w``.

    Raises
    ------
    RankDeficiencyError
        If a residual's weighted norm falls below ``1e-12`` times the
        weighted norm of its input column.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    w = _weights(grid)
    M, p = U.shape
    if w.shape != (M,):
        raise InputError(f"U has {M} rows but the grid has {w.size} points")
    Phi = np.empty((M, p))
    R = np.zeros((p, p))
    for k in range(p):
        v = U[:, k].copy()
        in_norm = np.sqrt(w @ (v * v))
        for j in range(k):
            r = w @ (v * Phi[:, j])
            v -= r * Phi[:, j]
            R[j, k] = r
        nrm = np.sqrt(w @ (v * v))
        if not nrm > RANK_TOL * in_norm:
            raise RankDeficiencyError(k, nrm / in_norm if in_norm > 0 else 0.0)
        R[k, k] = nrm
        Phi[:, k] = v / nrm
    return OrthoFrame(Phi, R, w)


def mgs_jacobian_apply(U, frame, dU, grid=None):
    """Directional derivative of the weighted MGS map at ``U``.

    Differentiates ``w_k = u_k - sum_{v<k} <u_k, phi_v> phi_v`` and the
    normalisation ``phi_k = w_k / ||w_k||`` with all inner products taken
    in the weighted metric.

    Parameters
    ----------
    U : ndarray, shape (M, p)
        Point of linearisation (the matrix ``frame`` was built from).
    frame : OrthoFrame
    dU : ndarray, shape (M, p) or (K, M, p)
        One direction, or a batch of ``K`` directions.
    grid : optional
        Ignored when given; the frame carries its weights.

    Returns
    -------
    ndarray, same shape as ``dU``
    """
    U = np.asarray(U, dtype=float)
    dU = np.asarray(dU, dtype=float)
    Phi, R, w = frame.Phi, frame.R, frame.weights
    if U.shape != Phi.shape:
        raise InputError(f"U shape {U.shape} does not match frame shape {Phi.shape}")
    single = dU.ndim == 2
    if single:
        dU = dU[None]
    if dU.shape[1:] != Phi.shape:
        raise InputError(f"direction shape {dU.shape[1:]} does not match frame shape {Phi.shape}")
    p = Phi.shape[1]
    dPhi = np.empty_like(dU)
    for k in range(p):
        du = dU[:, :, k]
        if k:
            prev = Phi[:, :k]
            dprev = dPhi[:, :, :k]
            c = (du * w) @ prev + np.einsum("kmj,m->kj", dprev, w * U[:, k])
            dw = du - c @ prev.T - dprev @ R[:k, k]
        else:
            dw = du
        phi = Phi[:, k]
        dPhi[:, :, k] = (dw - np.outer((dw * w) @ phi, phi)) / R[k, k]
    return dPhi[0] if single else dPhi


def mgs_gauge_check(C, R, basis, grid=None):
    """Max abs difference between ``M_W(B C R)`` and ``M_W(B C)``.

    For upper-triangular ``R`` with positive diagonal the two agree; a
    negative diagonal entry flips the sign of the matching column.
    """
    grid = basis.grid if grid is None else grid
    BC = basis.B @ np.asarray(C, dtype=float)
    a = mgs_orthonormalize(BC, grid).Phi
    b = mgs_orthonormalize(BC @ np.asarray(R, dtype=float), grid).Phi
    return float(np.max(np.abs(a - b)))


def sign_normalize(Phi):
    """Flip columns so each column's largest-magnitude entry is positive.

    Returns the flipped matrix and the applied signs.
    """
    Phi = np.asarray(Phi, dtype=float)
    idx = np.argmax(np.abs(Phi), axis=0)
    signs = np.sign(Phi[idx, np.arange(Phi.shape[1])])
    signs[signs == 0] = 1.0
    return Phi * signs, signs
