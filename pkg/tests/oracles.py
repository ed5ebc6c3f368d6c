"""Reference implementations used only by the tests.

Each oracle is written independently of the package code it checks:
plain loops, dense linear algebra, or a third-party library.
"""

import numpy as np


def trapezoid_weights(M):
    w = np.ones(M) / (M - 1)
    w[0] /= 2
    w[-1] /= 2
    return w


def cox_de_boor(x, knots, degree, i):
    """Naive recursive B_{i,degree}(x); right end point closes the last span."""
    t = knots
    if degree == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # x == 1 belongs to the last nonempty span
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    a = 0.0
    if t[i + degree] > t[i]:
        a = (x - t[i]) / (t[i + degree] - t[i]) * cox_de_boor(x, t, degree - 1, i)
    b = 0.0
    if t[i + degree + 1] > t[i + 1]:
        b = (t[i + degree + 1] - x) / (t[i + degree + 1] - t[i + 1]) * cox_de_boor(x, t, degree - 1, i + 1)
    return a + b


def classical_gs(U, w):
    """Classical (not modified) Gram-Schmidt in the inner product sum(w f g)."""
    U = np.asarray(U, dtype=float)
    out = np.zeros_like(U)
    for k in range(U.shape[1]):
        v = U[:, k].copy()
        for j in range(k):
            v = v - np.sum(w * U[:, k] * out[:, j]) * out[:, j]
        out[:, k] = v / np.sqrt(np.sum(w * v * v))
    return out


def phi_at(basis, Phi_grid, t):
    """Eigenfunction values at arbitrary t through the basis projection
    B(t)^T G^{-1} B^T W Phi, computed with dense solves."""
    w = basis.grid.weights
    coef = np.linalg.solve(basis.gram, basis.B.T @ (w[:, None] * Phi_grid))
    return basis.evaluate(t) @ coef


def dense_nll(C, eta, gamma, data, basis):
    """Average of r^T Sigma^{-1} r + log det Sigma with explicit matrices."""
    Phi = classical_gs(basis.B @ C, basis.grid.weights)
    lam = np.exp(eta)
    s2 = np.exp(gamma)
    total = 0.0
    for s in data:
        A = phi_at(basis, Phi, s.times)
        Sig = A @ np.diag(lam) @ A.T + s2 * np.eye(s.m)
        total += s.values @ np.linalg.inv(Sig) @ s.values + np.linalg.slogdet(Sig)[1]
    return total / len(data)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def dense_posterior(A, r, lam, s2):
    """Scores Lambda A^T Sigma^-1 r and covariance Lambda - H Sigma^-1 H^T."""
    L = np.diag(lam)
    Sig = A @ L @ A.T + s2 * np.eye(A.shape[0])
    Si = np.linalg.inv(Sig)
    H = L @ A.T
    return H @ Si @ r, L - H @ Si @ H.T


def matern_mpmath(r, sigma, rho, nu, dps=40):
    """Matern covariance at distance r with mpmath arbitrary precision."""
    import mpmath as mp

    with mp.workdps(dps):
        if r == 0:
            return float(sigma) ** 2
        x = mp.sqrt(2 * mp.mpf(nu)) * mp.mpf(r) / mp.mpf(rho)
        v = mp.mpf(sigma) ** 2 * 2 ** (1 - mp.mpf(nu)) / mp.gamma(nu) * x ** nu * mp.besselk(nu, x)
        return float(v)


def dense_nll_mp(x, Q, p, data, basis, dps=40):
    """``dense_nll`` at a flat parameter vector, evaluated with mpmath.

    The parameter-free matrices (grid basis values, weights, the map from
    grid values to values at the observation times) are taken from float64
    and held fixed; everything that depends on ``x`` runs at ``dps`` digits.
    """
    import mpmath as mp

    w = basis.grid.weights
    proj = np.linalg.solve(basis.gram, basis.B.T * w)
    with mp.workdps(dps):
        x = [mp.mpf(v) if not isinstance(v, mp.mpf) else v for v in x]
        C = mp.matrix(Q, p)
        for j in range(p):
            for i in range(Q):
                C[i, j] = x[j * Q + i]          # column-major, as ParamVector.flatten
        lam = [mp.exp(v) for v in x[Q * p:Q * p + p]]
        s2 = mp.exp(x[-1])
        U = mp.matrix(basis.B.tolist()) * C
        W = [mp.mpf(v) for v in w]
        M = U.rows
        Phi = mp.matrix(M, p)
        for k in range(p):
            v = [U[i, k] for i in range(M)]
            for j in range(k):
                c = mp.fsum(W[i] * U[i, k] * Phi[i, j] for i in range(M))
                v = [v[i] - c * Phi[i, j] for i in range(M)]
            nrm = mp.sqrt(mp.fsum(W[i] * v[i] ** 2 for i in range(M)))
            for i in range(M):
                Phi[i, k] = v[i] / nrm
        coef = mp.matrix(proj.tolist()) * Phi
        total = mp.mpf(0)
        for s in data:
            A = mp.matrix(basis.evaluate(s.times).tolist()) * coef
            Sig = A * mp.diag(lam) * A.T + s2 * mp.eye(s.m)
            r = mp.matrix(s.values.tolist())
            total += (r.T * mp.lu_solve(Sig, r))[0] + mp.log(mp.det(Sig))
        return total / len(data)


def central_diff_mp(f, x, h=1e-6, dps=40):
    """Central differences of an mpmath-valued ``f`` with an exact step."""
    import mpmath as mp

    with mp.workdps(dps):
        x = [mp.mpf(v) for v in np.asarray(x, dtype=float)]
        hh = mp.mpf(h)
        g = np.zeros(len(x))
        for k in range(len(x)):
            xp, xm = list(x), list(x)
            xp[k] += hh
            xm[k] -= hh
            g[k] = float((f(xp) - f(xm)) / (2 * hh))
    return g
