"""Ground-truth Gaussian processes and sparse-design data generation."""

import json
from dataclasses import dataclass, field
from math import factorial, gamma as gamma_fn
from typing import Callable, Optional

import numpy as np
from scipy import special

from .basis import bspline_design, clamped_knots, make_grid
from .dataset import SparseDataset, Subject
from .errors import InputError, NumericalError, RankDeficiencyError
from .mgs import mgs_orthonormalize

REF_POINTS = 50
SAMPLING_JITTER = 1e-10

# (n, l, u, sigma^2) for the three standard settings.
SETTINGS = {
    1: (50, 5, 15, 1.0),
    2: (100, 5, 15, 1.0),
    3: (500, 3, 7, 0.25),
}

POW_EIGENVALUES = tuple(k ** -0.6 for k in range(1, 6))
SPIKED_EIGENVALUES = (1.0, 0.66, 0.52, 0.07, 9.47e-3, 1.28e-3, 1.74e-4, 2.35e-5, 3.18e-6, 4.30e-7)


def reference_grid(n_points=REF_POINTS):
    """The equally spaced evaluation grid used for metrics."""
    return np.linspace(0.0, 1.0, n_points)


def _besselk_scaled_int(n, x):
    """``exp(x) K_n(x)`` for integer ``n >= 0`` by upward recurrence."""
    k_prev, k = special.k0e(x), special.k1e(x)
    if n == 0:
        return k_prev
    for j in range(1, n):
        k_prev, k = k, k_prev + (2.0 * j / x) * k
    return k


def matern_cov(s, t, sigma=1.0, rho=0.1, nu=4):
    """Matern covariance between points ``s`` and ``t`` (broadcasting).

    Integer ``nu`` uses modified Bessel functions K_0, K_1 and the upward
    recurrence ``K_{n+1} = K_{n-1} + (2n/x) K_n``; half-integer ``nu`` uses
    the closed form polynomial-times-exponential.
    """
    if sigma <= 0 or rho <= 0:
        raise InputError("Matern sigma and rho must be positive")
    two_nu = 2.0 * nu
    if nu <= 0 or abs(two_nu - round(two_nu)) > 1e-12:
        raise InputError(f"unsupported Matern order nu={nu}; use a positive integer or half-integer")
    r = np.abs(np.asarray(s, dtype=float) - np.asarray(t, dtype=float))
    x = np.sqrt(two_nu) * r / rho
    var = sigma * sigma
    out = np.full(x.shape, var)
    pos = x > 0
    xp = x[pos]
    if abs(nu - round(nu)) < 1e-12:
        n = int(round(nu))
        # x^nu K_nu(x) computed as x^nu * exp(-x) * (exp(x) K_nu(x))
        scaled = _besselk_scaled_int(n, xp)
        val = var * 2.0 ** (1 - n) / gamma_fn(n) * xp ** n * np.exp(-xp) * scaled
    else:
        n = int(round(nu - 0.5))
        poly = sum(
            factorial(n + k) / (factorial(k) * factorial(n - k)) * (2.0 * xp) ** (n - k)
            for k in range(n + 1)
        )
        val = var * np.exp(-xp) * factorial(n) / factorial(2 * n) * poly
    out[pos] = val
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GroundTruth:
    """A mean function and covariance kernel, with known eigenpairs when
    the kernel has finite rank.

    Attributes
    ----------
    name : str
    mean : callable
        ``mean(t) -> values``.
    cov : callable
        ``cov(s, t) -> matrix`` for 1-D arrays ``s`` and ``t``.
    eigenvalues : ndarray or None
    eigenfunctions : callable or None
        ``eigenfunctions(t) -> (len(t), p)`` values.
    """

    name: str
    mean: Callable
    cov: Callable
    eigenvalues: Optional[np.ndarray] = None
    eigenfunctions: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def eigen_on(self, points, n_numeric=10, refine=10):
        """Eigenvalues and eigenfunction values at equally spaced ``points``.

        Finite-rank truths return their exact eigenpairs. Otherwise the
        covariance is discretised on a grid ``refine`` times finer than
        ``points`` (which must be equally spaced on [0, 1]), the symmetric
        matrix ``W^{1/2} C W^{1/2}`` is eigen-decomposed with trapezoid
        weights, and the leading ``n_numeric`` pairs are returned.
        """
        points = np.asarray(points, dtype=float)
        if self.eigenfunctions is not None:
            return np.asarray(self.eigenvalues, dtype=float), self.eigenfunctions(points)
        g = make_grid(refine * (points.size - 1) + 1)
        Cm = self.cov(g.points, g.points)
        sw = np.sqrt(g.weights)
        vals, vecs = np.linalg.eigh(sw[:, None] * Cm * sw[None, :])
        order = np.argsort(vals)[::-1][:n_numeric]
        phi = vecs[:, order] / sw[:, None]
        return vals[order], phi[::refine]


def _rank_cov(lam, eig):
    def cov(s, t):
        return (eig(np.asarray(s, dtype=float)) * lam) @ eig(np.asarray(t, dtype=float)).T
    return cov


def eggcrate_truth():
    """Rank-3 Fourier process with mean 5 sin(2 pi t)."""
    lam = np.array([1.0, 0.5, 0.25])
    r2 = np.sqrt(2.0)

    def eig(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([
            r2 * np.sin(2 * np.pi * t), r2 * np.cos(4 * np.pi * t), r2 * np.sin(4 * np.pi * t)
        ])

    return GroundTruth(
        "eggcrate", lambda t: 5.0 * np.sin(2 * np.pi * np.asarray(t, dtype=float)),
        _rank_cov(lam, eig), lam, eig,
    )


def matern_truth(sigma=1.0, rho=0.1, nu=4):
    """Matern process with mean 5 cos(4t^3 + 6t^2 - 12t)."""
    def mean(t):
        t = np.asarray(t, dtype=float)
        return 5.0 * np.cos(4 * t ** 3 + 6 * t ** 2 - 12 * t)

    def cov(s, t):
        return matern_cov(np.asarray(s, dtype=float)[:, None], np.asarray(t, dtype=float)[None, :],
                          sigma, rho, nu)

    return GroundTruth("matern", mean, cov, params={"sigma": sigma, "rho": rho, "nu": nu})


def bspline_field_truth(Q=10, rule="pow", seed=0, degree=3, refine_points=1001):
    """Random cubic B-spline eigenfunctions with prescribed eigenvalues.

    ``rule='pow'`` gives five eigenvalues ``k^{-0.6}``; ``rule='spiked'``
    gives ten eigenvalues with three dominant and one near the noise level.
    Coefficients are drawn i.i.d. standard normal and orthonormalised by
    weighted Gram-Schmidt on a fine trapezoid grid; rank failures are
    redrawn up to five times. The mean is zero.
    """
    if rule == "pow":
        lam = np.array(POW_EIGENVALUES)
    elif rule == "spiked":
        lam = np.array(SPIKED_EIGENVALUES)
    else:
        raise InputError(f"unknown eigenvalue rule {rule!r}")
    p = lam.size
    if p > Q:
        raise InputError(f"rule {rule!r} needs {p} eigenfunctions but Q={Q}")
    knots = clamped_knots(Q, degree)
    fine = make_grid(refine_points)
    Bf = bspline_design(fine.points, knots, degree)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        C = rng.standard_normal((Q, p))
        try:
            frame = mgs_orthonormalize(Bf @ C, fine)
            break
        except RankDeficiencyError:
            continue
    else:
        raise NumericalError("could not draw a full-rank B-spline eigenbasis in 5 attempts")
    D = np.linalg.solve(frame.R.T, C.T).T  # C R^{-1}

    def eig(t):
        return bspline_design(np.atleast_1d(np.asarray(t, dtype=float)), knots, degree) @ D

    return GroundTruth(
        f"bspline_{rule}", lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        _rank_cov(lam, eig), lam, eig,
        params={"Q": Q, "degree": degree, "rule": rule, "seed": seed, "coef": D.tolist()},
    )


def make_truth(process, seed=0, **kw):
    if process == "eggcrate":
        return eggcrate_truth()
    if process == "matern":
        return matern_truth(**kw)
    if process in ("bspline_pow", "bspline_spiked"):
        return bspline_field_truth(rule=process.split("_")[1], seed=seed, **kw)
    raise InputError(f"unknown process {process!r}")


@dataclass(frozen=True)
class SimSpec:
    """Sampling design: n subjects with m_i ~ U{l, ..., u}, noise sigma^2."""

    process: str = "eggcrate"
    n: int = 100
    l: int = 5
    u: int = 15
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.l <= self.u or self.sigma2 < 0:
            raise InputError(f"invalid simulation design {self}")

    @classmethod
    def setting(cls, number, process="eggcrate", seed=0):
        """One of the three standard (n, l, u, sigma^2) designs."""
        try:
            n, l, u, s2 = SETTINGS[number]
        except KeyError:
            raise InputError(f"unknown setting {number}; choose 1, 2 or 3") from None
        return cls(process, n, l, u, s2, seed)


@dataclass(frozen=True)
class SimulatedData:
    data: SparseDataset
    ref_grid: np.ndarray
    latent_ref: np.ndarray          # (n, len(ref_grid)) true curves X_i on the reference grid
    latent_obs: tuple               # per-subject X_i at observed times
    truth: GroundTruth
    spec: SimSpec


def simulate_dataset(spec, truth, ref_grid=None):
    """Draw a sparse dataset from ``truth`` under design ``spec``.

    For each subject (with its own random stream derived from
    ``(spec.seed, index)``): draw ``m_i``, draw sorted times from U(0, 1),
    sample the latent curve jointly at the observed times and the reference
    grid from the truth covariance (Cholesky with 1e-10 diagonal jitter),
    add the mean, then add N(0, sigma^2) noise at observed times only.
    """
    ref = reference_grid() if ref_grid is None else np.asarray(ref_grid, dtype=float)
    subjects, lat_ref, lat_obs = [], [], []
    sd = np.sqrt(spec.sigma2)
    for i in range(spec.n):
        rng = np.random.default_rng([spec.seed, i])
        m = int(rng.integers(spec.l, spec.u + 1))
        t = np.sort(rng.uniform(0.0, 1.0, m))
        pts = np.concatenate([t, ref])
        K = truth.cov(pts, pts)
        K = 0.5 * (K + K.T)
        K[np.diag_indices_from(K)] += SAMPLING_JITTER
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"subject {i}: truth covariance not positive semi-definite after jitter"
            ) from None
        x = truth.mean(pts) + L @ rng.standard_normal(pts.size)
        y = x[:m] + sd * rng.standard_normal(m)
        subjects.append(Subject(str(i + 1), t, y))
        lat_obs.append(x[:m])
        lat_ref.append(x[m:])
    return SimulatedData(SparseDataset(tuple(subjects), 0.0, 1.0), ref, np.array(lat_ref),
                         tuple(lat_obs), truth, spec)


def truth_bundle(sim, n_numeric=10):
    """JSON-ready description of the truth on the reference grid."""
    lam, phi = sim.truth.eigen_on(sim.ref_grid, n_numeric=n_numeric)
    g = sim.ref_grid
    return {
        "process": sim.truth.name,
        "params": sim.truth.params,
        "sigma2": sim.spec.sigma2,
        "grid": g.tolist(),
        "mean": sim.truth.mean(g).tolist(),
        "eigenvalues": np.asarray(lam).tolist(),
        "eigenfunctions": np.asarray(phi).T.tolist(),
        "covariance": sim.truth.cov(g, g).tolist(),
        "spec": {"n": sim.spec.n, "l": sim.spec.l, "u": sim.spec.u, "seed": sim.spec.seed},
    }


def write_truth(sim, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth_bundle(sim), fh, indent=1)
