"""Reduced-rank Gaussian model for sparse curves and its likelihood.

Each subject's centred observations ``r_i`` are modelled as
``N(0, Phi_i Lambda Phi_i^T + sigma^2 I)`` where ``Phi_i`` holds the
eigenfunctions at the subject's times. The eigenfunctions are
``M_W(B C)``: the weighted Gram-Schmidt image of an unconstrained basis
expansion. Parameters are optimised on the log scale for the variances.

Per-subject algebra uses the scaled inner matrix
``K_i = I + S Phi_i^T Phi_i S / sigma^2`` with ``S = Lambda^{1/2}``, so

* ``log|Sigma_i| = m_i log sigma^2 + log|K_i|`` (determinant lemma), and
* ``Sigma_i^{-1} = (I - Phi_i S K_i^{-1} S Phi_i^T / sigma^2) / sigma^2``
  (Woodbury).

``K_i`` has eigenvalues >= 1, which keeps the p x p solves well conditioned
even when some eigenvalues are tiny.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .mgs import mgs_jacobian_apply, mgs_orthonormalize

PIVOT_FLOOR = 1e-12
JITTER = 1e-10


@dataclass(frozen=True)
class ParamVector:
    """Optimisation variables.

    Attributes
    ----------
    C : ndarray, shape (Q, p)
        Basis coefficients of the unconstrained expansion.
    eta : ndarray, shape (p,)
        Log-eigenvalues.
    gamma : float
        Log noise variance.
    """

    C: np.ndarray
    eta: np.ndarray
    gamma: float

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if eta.size != C.shape[1]:
            raise InputError(f"eta has {eta.size} entries but C has {C.shape[1]} columns")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def Q(self):
        return self.C.shape[0]

    @property
    def p(self):
        return self.C.shape[1]

    @property
    def lam(self):
        return np.exp(self.eta)

    @property
    def sigma2(self):
        return float(np.exp(self.gamma))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.C)) and np.all(np.isfinite(self.eta))
                    and np.isfinite(self.gamma))

    def flatten(self):
        """Column-major ``C``, then ``eta``, then ``gamma``."""
        return np.concatenate([self.C.ravel(order="F"), self.eta, [self.gamma]])

    @classmethod
    def from_flat(cls, x, Q, p):
        x = np.asarray(x, dtype=float)
        if x.size != Q * p + p + 1:
            raise InputError(f"flat vector has {x.size} entries, expected {Q * p + p + 1}")
        return cls(x[: Q * p].reshape((Q, p), order="F"), x[Q * p: Q * p + p], x[-1])


def linear_interp_matrix(t, M):
    """Rows of linear-interpolation weights on the uniform M-point grid."""
    t = np.asarray(t, dtype=float)
    pos = t * (M - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, M - 2)
    frac = pos - i0
    out = np.zeros((t.size, M))
    rows = np.arange(t.size)
    out[rows, i0] = 1.0 - frac
    out[rows, i0 + 1] = frac
    return out


class SubjectDesign:
    """Padded per-subject arrays for vectorised likelihood evaluation.

    Subjects are stacked into arrays of shape ``(n, m_max, ...)``; padding
    rows are zero in both the residual and the evaluation matrix, which
    leaves ``Phi_i^T Phi_i``, ``Phi_i^T r_i`` and ``r_i^T r_i`` unchanged.

    ``eval_mode='continuous'`` evaluates eigenfunctions at observed times
    through the basis representation ``Phi(t) = B(t)^T G^{-1} B^T W Phi``;
    ``'interp'`` linearly interpolates the grid values instead (cheaper,
    with O(h^2) interpolation error).
    """

    def __init__(self, data, basis, eval_mode="continuous"):
        self.n = len(data)
        self.m = np.array([s.m for s in data], dtype=float)
        if np.any(self.m < 1):
            raise InputError("every subject needs at least one observation")
        self.m_max = int(self.m.max())
        self.eval_mode = eval_mode
        if eval_mode == "continuous":
            self.T = basis.projector
            evals = [basis.evaluate(s.times) for s in data]
        elif eval_mode == "interp":
            self.T = None
            evals = [linear_interp_matrix(s.times, basis.grid.M) for s in data]
        else:
            raise InputError(f"unknown eval_mode {eval_mode!r}")
        K = evals[0].shape[1]
        self.E = np.zeros((self.n, self.m_max, K))
        self.r = np.zeros((self.n, self.m_max))
        for i, (s, Ei) in enumerate(zip(data, evals)):
            self.E[i, : s.m] = Ei
            self.r[i, : s.m] = s.values
        self.rtr = np.einsum("ni,ni->n", self.r, self.r)

    def reduce(self, Phi):
        """Grid values (M x p) to the space the evaluation matrix acts on."""
        return Phi if self.T is None else self.T @ Phi

    def subject_phi(self, Phi):
        """Padded eigenfunction values at observed times, (n, m_max, p)."""
        return self.E @ self.reduce(Phi)

    def pullback(self, dA):
        """Adjoint of :meth:`subject_phi`: (n, m_max, p) -> (M, p)."""
        dZ = np.einsum("nik,nip->kp", self.E, dA)
        return dZ if self.T is None else self.T.T @ dZ


def _inner(A, lam, s2):
    """Scaled inner matrices, their inverses and log-determinants."""
    S = np.sqrt(lam)
    AtA = np.einsum("nip,niq->npq", A, A)
    K = np.eye(lam.size) + (S[:, None] * AtA * S[None, :]) / s2
    try:
        L = np.linalg.cholesky(K)
        piv = np.diagonal(L, axis1=1, axis2=2)
        if np.any(piv < PIVOT_FLOOR):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        K = K + JITTER * np.eye(lam.size)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise NumericalError("inner p x p covariance factor is not positive definite") from None
        piv = np.diagonal(L, axis1=1, axis2=2)
    logdetK = 2.0 * np.sum(np.log(piv), axis=1)
    return S, AtA, np.linalg.inv(K), logdetK


def subject_terms(A, r, rtr, m, lam, s2, with_grad=False):
    """Per-subject ``r^T Sigma^{-1} r + log|Sigma|`` (and gradient pieces).

    Parameters
    ----------
    A : ndarray, (n, m_max, p)
        Eigenfunction values at observed times (zero-padded).
    r : ndarray, (n, m_max)
        Centred observations (zero-padded).
    rtr, m : ndarray, (n,)
        ``r_i^T r_i`` and observation counts.
    lam : ndarray, (p,)
    s2 : float

    Returns
    -------
    terms : ndarray, (n,)
    grads : tuple, optional
        ``(dA, dlam, ds2)`` derivatives of each subject's term with respect
        to ``A`` (n, m_max, p), ``lam`` (n, p) and ``sigma^2`` (n,).
    """
    if not (np.all(np.isfinite(lam)) and np.isfinite(s2)) or s2 <= 0 or np.any(lam <= 0):
        raise NumericalError("eigenvalues and noise variance must be finite and positive")
    S, AtA, Kinv, logdetK = _inner(A, lam, s2)
    Atr = np.einsum("nip,ni->np", A, r)
    b = S * Atr
    Kb = np.einsum("npq,nq->np", Kinv, b)
    quad = (rtr - np.einsum("np,np->n", b, Kb) / s2) / s2
    terms = quad + m * np.log(s2) + logdetK
    if not with_grad:
        return terms

    SKb = S * Kb
    alpha = (r - np.einsum("nip,np->ni", A, SKb) / s2) / s2          # Sigma^{-1} r
    X = Kinv @ (S[:, None] * AtA)                                     # K^{-1} S A^T A
    SXS = S[:, None] * X                                              # S K^{-1} S A^T A
    SinvA = (A - A @ SXS / s2) / s2                                   # Sigma^{-1} A
    At_alpha = (Atr - np.einsum("npq,nq->np", AtA, SKb) / s2) / s2    # A^T Sigma^{-1} r
    # Gamma = Sigma^{-1} - alpha alpha^T; d term = tr(Gamma dSigma)
    GA = SinvA - alpha[:, :, None] * At_alpha[:, None, :]
    dA = 2.0 * GA * lam
    AtSinvA_diag = (np.diagonal(AtA, axis1=1, axis2=2)
                    - np.einsum("npq,nqp->np", AtA, SXS) / s2) / s2
    dlam = AtSinvA_diag - At_alpha ** 2
    tr_Sinv = m / s2 - np.einsum("npp->n", SXS) / s2 ** 2
    ds2 = tr_Sinv - np.einsum("ni,ni->n", alpha, alpha)
    return terms, (dA, dlam, ds2)


def _check_params(params, basis):
    if params.Q != basis.Q:
        raise InputError(f"params have Q={params.Q} but the basis has Q={basis.Q}")
    if not params.is_finite():
        raise NumericalError("non-finite parameter vector")
    with np.errstate(over="raise"):
        try:
            lam = np.exp(params.eta)
            s2 = float(np.exp(params.gamma))
        except FloatingPointError:
            raise NumericalError("exp overflow in eigenvalue / noise parameters") from None
    if s2 == 0.0 or np.any(lam == 0.0):
        raise NumericalError("eigenvalue or noise variance underflowed to zero")
    return lam, s2


class Likelihood:
    """Average negative log-likelihood bound to one dataset and basis.

    Precomputes the padded subject design once so repeated evaluations
    (as inside an optimiser) cost a few batched array operations.
    """

    def __init__(self, data, basis, eval_mode="continuous"):
        self.basis = basis
        self.design = SubjectDesign(data, basis, eval_mode)
        self.n = self.design.n

    def phi(self, params):
        return mgs_orthonormalize(self.basis.B @ params.C, self.basis.grid)

    def subject_terms(self, params):
        """Per-subject ``L_i`` (not averaged)."""
        lam, s2 = _check_params(params, self.basis)
        frame = self.phi(params)
        d = self.design
        A = d.subject_phi(frame.Phi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return subject_terms(A, d.r, d.rtr, d.m, lam, s2)

    def value(self, params):
        terms = self.subject_terms(params)
        val = float(np.mean(terms))
        if not np.isfinite(val):
            raise NumericalError("non-finite negative log-likelihood")
        return val

    def value_and_grad(self, params):
        """Objective and gradient in (C, eta, gamma) as a ParamVector."""
        lam, s2 = _check_params(params, self.basis)
        basis, d = self.basis, self.design
        U = basis.B @ params.C
        frame = mgs_orthonormalize(U, basis.grid)
        A = d.subject_phi(frame.Phi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            terms, (dA, dlam, ds2) = subject_terms(A, d.r, d.rtr, d.m, lam, s2, with_grad=True)
        n = d.n
        val = float(terms.sum() / n)
        if not np.isfinite(val):
            raise NumericalError("non-finite negative log-likelihood")
        if not (np.all(np.isfinite(dA)) and np.all(np.isfinite(dlam)) and np.all(np.isfinite(ds2))):
            raise NumericalError("non-finite likelihood gradient")
        g_eta = lam * dlam.sum(axis=0) / n
        g_gamma = s2 * ds2.sum() / n
        g_Phi = d.pullback(dA) / n

        Q, p = params.C.shape
        # Batch of unit directions dC = e_l e_k^T  ->  dU = B[:, l] e_k^T.
        dU = np.zeros((Q * p, basis.B.shape[0], p))
        for k in range(p):
            dU[k * Q:(k + 1) * Q, :, k] = basis.B.T
        dPhi = mgs_jacobian_apply(U, frame, dU)
        g_C = np.einsum("dmp,mp->d", dPhi, g_Phi).reshape((Q, p), order="F")
        return val, ParamVector(g_C, g_eta, g_gamma)


def nll(params, data, basis, grid=None, eval_mode="continuous"):
    """Average negative log-likelihood (2 pi constant dropped)."""
    return Likelihood(data, basis, eval_mode).value(params)


def nll_grad(params, data, basis, grid=None, eval_mode="continuous"):
    """Gradient of :func:`nll` with respect to (C, eta, gamma)."""
    return Likelihood(data, basis, eval_mode).value_and_grad(params)[1]


def nll_dense(params, data, basis, grid=None, eval_mode="continuous"):
    """Reference path: explicit m_i x m_i covariances, ``solve`` and ``slogdet``."""
    lik = Likelihood(data, basis, eval_mode)
    lam, s2 = _check_params(params, basis)
    Phi = lik.phi(params).Phi
    A = lik.design.subject_phi(Phi)
    total = 0.0
    for i, s in enumerate(data):
        Ai = A[i, : s.m]
        Sig = (Ai * lam) @ Ai.T + s2 * np.eye(s.m)
        sign, logdet = np.linalg.slogdet(Sig)
        if sign <= 0:
            raise NumericalError(f"subject {s.id!r}: covariance not positive definite")
        r = s.values
        total += r @ np.linalg.solve(Sig, r) + logdet
    return total / len(data)


def covariance_on_grid(params, basis, grid=None):
    """``Phi Lambda Phi^T + sigma^2 I`` on the quadrature grid."""
    grid = basis.grid if grid is None else grid
    lam, s2 = _check_params(params, basis)
    Phi = mgs_orthonormalize(basis.B @ params.C, grid).Phi
    Sig = (Phi * lam) @ Phi.T
    Sig = 0.5 * (Sig + Sig.T)
    Sig[np.diag_indices_from(Sig)] += s2
    return Sig
