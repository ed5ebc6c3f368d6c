"""Quadrature grids and B-spline / Fourier basis systems on [0, 1]."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, NumericalError

GRAM_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform grid on [0, 1] with trapezoidal weights (summing to one)."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def M(self):
        return self.points.size

    def inner(self, f, g):
        """Weighted inner product of grid values (columns broadcast)."""
        return np.sum(self.weights[:, None] * np.atleast_2d(f.T).T * np.atleast_2d(g.T).T, axis=0)


def make_grid(M=101):
    """Uniform ``M``-point grid on [0, 1] with trapezoid weights."""
    if M < 3:
        raise InputError(f"quadrature grid needs M >= 3 points, got {M}")
    points = np.linspace(0.0, 1.0, M)
    h = 1.0 / (M - 1)
    weights = np.full(M, h)
    weights[0] = weights[-1] = h / 2
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureGrid(points, weights)


def clamped_knots(Q, degree):
    """Open uniform knot vector with ``Q - degree - 1`` interior knots."""
    interior = np.linspace(0.0, 1.0, Q - degree + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def bspline_design(x, knots, degree):
    """Evaluate all B-splines of a clamped knot vector at ``x``.

    Uses the Cox-de Boor triangular recursion on the nonzero functions of
    each knot span. The right end point belongs to the last span so that
    the final basis function equals one at ``x = 1``.

    Returns
    -------
    ndarray, shape (len(x), Q)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    knots = np.asarray(knots, dtype=float)
    Q = knots.size - degree - 1
    span = np.searchsorted(knots, x, side="right") - 1
    span = np.clip(span, degree, Q - 1)

    N = np.zeros((x.size, degree + 1))
    N[:, 0] = 1.0
    left = np.empty((x.size, degree + 1))
    right = np.empty((x.size, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved

    out = np.zeros((x.size, Q))
    cols = span[:, None] - degree + np.arange(degree + 1)[None, :]
    np.put_along_axis(out, cols, N, axis=1)
    return out


def fourier_design(x, Q):
    """1, sqrt(2) sin(2 pi t), sqrt(2) cos(2 pi t), sqrt(2) sin(4 pi t), ..."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((x.size, Q))
    out[:, 0] = 1.0
    for j in range(1, Q):
        freq = 2.0 * np.pi * ((j + 1) // 2)
        out[:, j] = np.sqrt(2.0) * (np.sin(freq * x) if j % 2 else np.cos(freq * x))
    return out


def inv_sqrt_spd(A, floor=GRAM_EIG_FLOOR):
    """Symmetric inverse square root of an SPD matrix via ``eigh``."""
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    if vals[0] < floor:
        raise NumericalError(
            f"Gram matrix is numerically singular (smallest eigenvalue {vals[0]:.3e})"
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class BasisSystem:
    """A basis evaluated on a quadrature grid plus its Gram matrix.

    Attributes
    ----------
    kind : {'bspline', 'fourier'}
    Q : int
        Number of basis functions.
    grid : QuadratureGrid
    B : ndarray, shape (M, Q)
        Basis values at the grid points.
    gram : ndarray, shape (Q, Q)
        Quadrature Gram matrix of the basis.
    gram_inv_sqrt : ndarray, shape (Q, Q)
    degree, knots
        B-spline degree and full knot vector (None for Fourier).
    gram_refine : int
        Refinement factor of the grid the Gram matrix was integrated on
        (1 means the model grid itself).
    """

    kind: str
    Q: int
    grid: QuadratureGrid
    B: np.ndarray
    gram: np.ndarray
    gram_inv_sqrt: np.ndarray
    degree: Optional[int] = None
    knots: Optional[np.ndarray] = None
    gram_refine: int = 1
    _proj: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("B", "gram", "gram_inv_sqrt"):
            getattr(self, name).setflags(write=False)
        # Maps grid values to basis coefficients: G^{-1} B^T W.
        proj = self.gram_inv_sqrt @ (self.gram_inv_sqrt @ (self.B.T * self.grid.weights))
        proj.setflags(write=False)
        object.__setattr__(self, "_proj", proj)

    @property
    def projector(self):
        """Q x M matrix taking grid values f(tau) to coefficients of the
        continuous representation, ``G_B^{-1} B^T W f``."""
        return self._proj

    @property
    def B_tilde(self):
        """Orthonormalised basis on the grid, ``B G_B^{-1/2}``."""
        return self.B @ self.gram_inv_sqrt

    def evaluate(self, t):
        """Raw basis values at arbitrary points of [0, 1], shape (len(t), Q)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise InputError("basis evaluation points must lie in [0, 1]")
        if self.kind == "bspline":
            return bspline_design(t, self.knots, self.degree)
        return fourier_design(t, self.Q)

    def spec(self):
        """JSON-friendly description sufficient to rebuild the basis."""
        d = {"kind": self.kind, "Q": self.Q, "M": self.grid.M, "gram_refine": self.gram_refine}
        if self.kind == "bspline":
            d["degree"] = self.degree
            d["knots"] = [float(k) for k in self.knots]
        return d


def _build(kind, Q, grid, design, degree=None, knots=None, gram_refine=1):
    B = design(grid.points)
    if np.any(np.all(np.abs(B) < 1e-300, axis=0)):
        raise InputError(f"{kind} basis with Q={Q} has a function with no support on the grid")
    if gram_refine == 1:
        G = (B.T * grid.weights) @ B
    else:
        fine = make_grid(gram_refine * (grid.M - 1) + 1)
        Bf = design(fine.points)
        G = (Bf.T * fine.weights) @ Bf
    G = 0.5 * (G + G.T)
    return BasisSystem(kind, Q, grid, B, G, inv_sqrt_spd(G), degree,
                       None if knots is None else np.asarray(knots, dtype=float), gram_refine)


def bspline_basis(Q, degree=3, grid=None, gram_refine=1):
    """Clamped uniform B-spline basis of ``Q`` functions on ``grid``.

    ``gram_refine > 1`` integrates the Gram matrix on a uniform grid that
    many times finer than ``grid`` instead of on ``grid`` itself.
    """
    if degree < 0:
        raise InputError("B-spline degree must be non-negative")
    if Q < degree + 1:
        raise InputError(f"Q={Q} is too small for degree {degree} (need Q >= {degree + 1})")
    grid = make_grid() if grid is None else grid
    knots = clamped_knots(Q, degree)
    return _build("bspline", Q, grid, lambda x: bspline_design(x, knots, degree),
                  degree, knots, gram_refine)


def fourier_basis(Q, grid=None, gram_refine=1):
    """Fourier basis (constant, then sine/cosine pairs of rising frequency)."""
    if Q < 1:
        raise InputError(f"Fourier basis needs Q >= 1, got {Q}")
    grid = make_grid() if grid is None else grid
    return _build("fourier", Q, grid, lambda x: fourier_design(x, Q), gram_refine=gram_refine)


def make_basis(kind, Q, grid=None, degree=3, gram_refine=1):
    """Dispatch on ``kind`` ('bspline' or 'fourier')."""
    if kind == "bspline":
        return bspline_basis(Q, degree, grid, gram_refine)
    if kind == "fourier":
        return fourier_basis(Q, grid, gram_refine)
    raise InputError(f"unknown basis kind {kind!r}")


def eval_basis_at(basis, t):
    """Exact basis values at a point ``t`` in [0, 1] (length-Q vector)."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t={t!r} is outside [0, 1]")
    return basis.evaluate([t])[0]
