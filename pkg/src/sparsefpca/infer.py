"""Fitted-model products: eigenfunctions anywhere on [0, 1], scores,
reconstructed trajectories and pointwise bands.

Scores are conditional expectations ``E[xi_i | Y_i] = Lambda Phi_i^T
Sigma_i^{-1} r_i`` and the band at ``t`` uses the conditional covariance
``V_i = Lambda - H_i Sigma_i^{-1} H_i^T`` with ``H_i = Lambda Phi_i^T``
(a p x m_i matrix). Both are computed through the scaled inner matrix
``K_i = I + S Phi_i^T Phi_i S / sigma^2``, ``S = Lambda^{1/2}``:

* ``xi_i = S K_i^{-1} S Phi_i^T r_i / sigma^2``
* ``V_i = S K_i^{-1} S``

which are the Woodbury forms of the expressions above and need only p x p
solves.
"""

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import InputError, NumericalError
from .mgs import mgs_orthonormalize, sign_normalize

NEG_VAR_TOL = 1e-8


@dataclass(frozen=True)
class FittedModel:
    """A fitted reduced-rank covariance model with its mean.

    Attributes
    ----------
    basis : BasisSystem
        Basis and quadrature grid the model was fitted on.
    Phi : ndarray, shape (M, p)
        Eigenfunctions on the grid, ordered by decreasing eigenvalue and
        sign-normalised (largest-magnitude value positive).
    lam : ndarray, shape (p,)
    sigma2 : float
    Ctilde : ndarray, shape (Q, p)
        Coefficients in the orthonormalised basis ``B G^{-1/2}``; the
        continuous eigenfunctions are ``G^{-1/2} B(t)`` dotted with them.
    mean : MeanFunction
    domain : tuple of float
        Original time bounds (the model itself lives on [0, 1]).
    diagnostics : dict
        Fit summary (nll, convergence, iterations, ...).
    config : dict
        Settings that produced the model, echoed into saved files.
    """

    basis: object
    Phi: np.ndarray
    lam: np.ndarray
    sigma2: float
    Ctilde: np.ndarray
    mean: object
    domain: tuple = (0.0, 1.0)
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.lam.size

    @property
    def Q(self):
        return self.basis.Q

    @property
    def grid(self):
        return self.basis.grid

    def eigenfunctions(self, t):
        return eval_eigenfunctions(self, t)


def _ctilde(basis, Phi):
    return basis.B_tilde.T @ (Phi * basis.grid.weights[:, None])


def build_model(fit, basis, mean, domain=(0.0, 1.0), force=False, extra=None, config=None):
    """Assemble a :class:`FittedModel` from an optimiser result.

    Parameters
    ----------
    fit : FitResult
    basis : BasisSystem
        The basis the fit used.
    mean : MeanFunction
    domain : (float, float)
    force : bool
        Accept a fit that did not converge.
    extra : dict, optional
        Additional entries for ``diagnostics``.
    config : dict, optional
        Settings to echo when the model is saved.

    Raises
    ------
    NumericalError
        If the fit did not converge and ``force`` is false.
    """
    if not fit.converged and not force:
        raise NumericalError(
            f"fit did not converge ({fit.reason} after {fit.iterations} iterations); "
            "pass force=True to use it anyway"
        )
    params = fit.params
    if params.Q != basis.Q:
        raise InputError(f"fit has Q={params.Q} but the basis has Q={basis.Q}")
    Phi = mgs_orthonormalize(basis.B @ params.C, basis.grid).Phi
    lam = params.lam
    order = np.argsort(-lam, kind="stable")
    Phi, _ = sign_normalize(Phi[:, order])
    lam = lam[order]
    diagnostics = {
        "nll": float(fit.nll_value),
        "converged": bool(fit.converged),
        "reason": fit.reason,
        "iterations": int(fit.iterations),
        "line_search_failures": int(fit.ls_failures),
        "seed": int(fit.seed),
        "attempts": int(getattr(fit, "attempts", 1)),
    }
    diagnostics.update(extra or {})
    return FittedModel(basis, Phi, lam, float(params.sigma2), _ctilde(basis, Phi),
                       mean, (float(domain[0]), float(domain[1])), diagnostics,
                       dict(config or {}))


def model_from_representation(basis, Ctilde, lam, sigma2, mean, domain=(0.0, 1.0),
                              diagnostics=None, config=None):
    """Rebuild a model from its stored coefficients (grid values recomputed)."""
    Ctilde = np.asarray(Ctilde, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if Ctilde.shape != (basis.Q, lam.size):
        raise InputError(f"Ctilde has shape {Ctilde.shape}, expected ({basis.Q}, {lam.size})")
    if np.any(lam <= 0) or not sigma2 > 0:
        raise InputError("eigenvalues and noise variance must be positive")
    Phi = basis.B_tilde @ Ctilde
    return FittedModel(basis, Phi, lam, float(sigma2), Ctilde, mean,
                       (float(domain[0]), float(domain[1])), dict(diagnostics or {}),
                       dict(config or {}))


def eval_eigenfunctions(model, t):
    """Eigenfunction values at points of [0, 1].

    Returns a length-p vector for scalar ``t`` and an (len(t), p) array
    otherwise.
    """
    scalar = np.ndim(t) == 0
    Bt = model.basis.evaluate(t)
    out = (Bt @ model.basis.gram_inv_sqrt) @ model.Ctilde
    return out[0] if scalar else out


def _posterior(model, times, resid):
    """Scores and conditional covariance for one subject."""
    lam, s2 = model.lam, model.sigma2
    S = np.sqrt(lam)
    p = lam.size
    if len(times) == 0:
        return np.zeros(p), np.diag(lam)
    A = eval_eigenfunctions(model, np.asarray(times, dtype=float))
    SAtA = S[:, None] * (A.T @ A) * S[None, :]
    K = np.eye(p) + SAtA / s2
    L = np.linalg.cholesky(K)
    Kinv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(p)))
    xi = S * (Kinv @ (S * (A.T @ resid))) / s2
    V = S[:, None] * Kinv * S[None, :]
    return xi, 0.5 * (V + V.T)


def scores(model, data):
    """Conditional-expectation scores, one length-p vector per subject.

    Returns
    -------
    dict
        Subject id -> ndarray of shape (p,).
    """
    out = {}
    for s in data:
        if s.m == 0:
            raise InputError(f"subject {s.id!r} has no observations")
        out[s.id] = _posterior(model, s.times, s.values - model.mean(s.times))[0]
    return out


def z_quantile(alpha):
    """Two-sided standard normal critical value ``z_{1 - alpha/2}``."""
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class SubjectPrediction:
    """Reconstructed trajectory of one subject on an evaluation grid (unit scale)."""

    id: str
    t: np.ndarray
    yhat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    xi: np.ndarray


def _band_var(Phi_t, V):
    q = np.einsum("tp,pq,tq->t", Phi_t, V, Phi_t)
    if np.any(q < -NEG_VAR_TOL):
        raise NumericalError(f"negative predictive variance {q.min():.3g}; model is inconsistent")
    return np.maximum(q, 0.0)


def predict_subject(model, subject_id, times, values, t_eval, alpha=0.05):
    """Trajectory and band for a single subject given its (possibly empty)
    observations; with no observations this returns the prior band."""
    z = z_quantile(alpha)
    times = np.asarray(times, dtype=float)
    resid = np.asarray(values, dtype=float) - model.mean(times)
    xi, V = _posterior(model, times, resid)
    t_eval = np.asarray(t_eval, dtype=float)
    Phi_t = eval_eigenfunctions(model, t_eval)
    yhat = model.mean(t_eval) + Phi_t @ xi
    half = z * np.sqrt(_band_var(Phi_t, V))
    return SubjectPrediction(str(subject_id), t_eval, yhat, yhat - half, yhat + half, xi)


def predict_with_bands(model, data, t_eval=None, alpha=0.05):
    """Predictions with pointwise bands for every subject of ``data``.

    Parameters
    ----------
    t_eval : array_like, optional
        Evaluation points on [0, 1]; defaults to the model grid.
    alpha : float
        Bands have nominal pointwise coverage ``1 - alpha``.
    """
    t_eval = model.grid.points if t_eval is None else t_eval
    preds = []
    for s in data:
        if s.m == 0:
            raise InputError(f"subject {s.id!r} has no observations")
        preds.append(predict_subject(model, s.id, s.times, s.values, t_eval, alpha))
    return preds


def covariance_surface(model, t=None, nugget=False):
    """``Phi(s) Lambda Phi(t)^T`` on a grid (plus ``sigma^2`` on the diagonal
    when ``nugget``)."""
    Phi_t = model.Phi if t is None else eval_eigenfunctions(model, t)
    C = (Phi_t * model.lam) @ Phi_t.T
    C = 0.5 * (C + C.T)
    if nugget:
        C[np.diag_indices_from(C)] += model.sigma2
    return C
