"""BFGS with a cubic-interpolation Wolfe line search, and the model fit."""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import FitFailedError, InputError, NumericalError
from .model import Likelihood, ParamVector

log = logging.getLogger(__name__)

CURVATURE_SKIP = 1e-10


@dataclass(frozen=True)
class OptimConfig:
    """Settings for :func:`bfgs_minimize` and :func:`fit`."""

    max_iters: int = 500
    grad_inf_tol: float = 1e-6
    nll_abs_tol: float = 1e-5
    nll_change_grad_gate: Optional[float] = 1e-3
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 40
    seed: int = 0
    n_restarts: int = 1
    max_retries: int = 0
    record_trace: bool = True

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise InputError("Wolfe constants need 0 < c1 < c2 < 1")
        if self.grad_inf_tol <= 0 or self.nll_abs_tol <= 0:
            raise InputError("tolerances must be positive")
        if self.max_iters < 1 or self.max_line_search_steps < 1 or self.n_restarts < 1:
            raise InputError("iteration counts must be positive")
        if self.max_retries < 0:
            raise InputError("max_retries must be >= 0")


@dataclass
class OptimResult:
    """Raw BFGS outcome on a flat vector."""

    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    reason: str
    iterations: int
    n_evals: int
    ls_failures: int
    skipped_updates: int
    trace: List[Tuple[float, float]] = field(default_factory=list)


@dataclass
class FitResult:
    """Outcome of fitting the model for one (Q, p).

    ``reason`` is one of ``'gradient'``, ``'nll-change'`` (converged) or
    ``'max-iters'``, ``'line-search'`` (not converged).
    """

    params: ParamVector
    nll_value: float
    converged: bool
    reason: str
    iterations: int
    ls_failures: int
    n_evals: int = 0
    seed: int = 0
    seconds: float = 0.0
    trace: List[Tuple[float, float]] = field(default_factory=list)
    attempts: int = 1

    @property
    def Q(self):
        return self.params.Q

    @property
    def p(self):
        return self.params.p


def init_params(Q, p, seed=0):
    """Starting point: C ~ U[-1, 1] i.i.d., eigenvalues spread from 100 down
    to 1 on the log scale, noise variance 0.01."""
    if not Q >= p >= 1:
        raise InputError(f"need Q >= p >= 1, got Q={Q}, p={p}")
    rng = np.random.default_rng(seed)
    C = rng.uniform(-1.0, 1.0, size=(Q, p))
    if p == 1:
        eta = np.array([np.log(100.0)])
    else:
        k = np.arange(p)
        eta = np.log(100.0 - (100.0 - 1.0) / (p - 1) * k)
    return ParamVector(C, eta, np.log(0.01))


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic through (a, fa, da) and (b, fb, db), or None."""
    with np.errstate(all="ignore"):
        d1 = da + db - 3.0 * (fa - fb) / (a - b)
        rad = d1 * d1 - da * db
        if not rad >= 0:
            return None
        d2 = np.copysign(np.sqrt(rad), b - a)
        den = db - da + 2.0 * d2
        if den == 0:
            return None
        x = b - (b - a) * (db + d2 - d1) / den
    return x if np.isfinite(x) else None


def _quad_min(a, fa, da, b, fb):
    den = 2.0 * (fb - fa - da * (b - a))
    if den <= 0:
        return None
    return a - da * (b - a) ** 2 / den


class _LineSearch:
    """Strong-Wolfe search: bracketing phase then zoom with safeguarded
    cubic interpolation. Non-finite trial values count as 'too far'."""

    def __init__(self, fun, c1, c2, max_steps):
        self.fun, self.c1, self.c2, self.max_steps = fun, c1, c2, max_steps

    def _eval(self, x, d, a):
        f, g = self.fun(x + a * d)
        self.evals += 1
        if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
            return np.inf, None, np.nan
        return f, g, float(g @ d)

    def search(self, x, f0, g0, d, a_init):
        self.evals = 0
        dphi0 = float(g0 @ d)
        c1, c2 = self.c1, self.c2
        best = None  # Armijo-satisfying (a, f, g) seen so far
        a_prev, f_prev, dp_prev = 0.0, f0, dphi0
        a = a_init
        first = True
        while self.evals < self.max_steps:
            f, g, dp = self._eval(x, d, a)
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or (not first and f >= f_prev):
                return self._zoom(x, f0, dphi0, d, (a_prev, f_prev, dp_prev), (a, f, dp), best)
            best = (a, f, g)
            if abs(dp) <= -c2 * dphi0:
                return a, f, g, True
            if dp >= 0:
                return self._zoom(x, f0, dphi0, d, (a, f, dp), (a_prev, f_prev, dp_prev), best)
            a_next = _cubic_min(a_prev, f_prev, dp_prev, a, f, dp)
            lo, hi = a + 1.1 * (a - a_prev), a + 10.0 * (a - a_prev)
            a_next = hi if a_next is None or not lo <= a_next <= hi else a_next
            a_prev, f_prev, dp_prev = a, f, dp
            a = a_next
            first = False
        return (*best, False) if best else None

    def _zoom(self, x, f0, dphi0, d, lo, hi, best):
        c1, c2 = self.c1, self.c2
        (a_lo, f_lo, d_lo), (a_hi, f_hi, d_hi) = lo, hi
        while self.evals < self.max_steps:
            width = a_hi - a_lo
            a = None
            if np.isfinite(f_hi):
                if np.isfinite(d_hi):
                    a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
                if a is None:
                    a = _quad_min(a_lo, f_lo, d_lo, a_hi, f_hi)
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not lo_b <= a <= hi_b:
                a = a_lo + 0.5 * width
            f, g, dp = self._eval(x, d, a)
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, dp
            else:
                best = (a, f, g)
                if abs(dp) <= -c2 * dphi0:
                    return a, f, g, True
                if dp * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, dp
            if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
                break
        return (*best, False) if best else None


def bfgs_minimize(fun, x0, config=None):
    """Minimise ``fun`` with BFGS.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (f, g)``. May return ``(inf, None)`` for infeasible
        points; the line search then backs off.
    x0 : array_like
    config : OptimConfig, optional

    Returns
    -------
    OptimResult
        ``converged`` is True when the gradient sup-norm fell below
        ``grad_inf_tol`` or the objective changed by less than
        ``nll_abs_tol`` in one iteration while the gradient sup-norm was
        below ``nll_change_grad_gate`` (None disables the gate; the
        likelihood has long low-progress plateaus where an ungated
        objective-change test fires far from a minimum). A line-search
        failure resets the inverse Hessian to the identity; a second
        consecutive failure ends the run unconverged.
    """
    cfg = config or OptimConfig()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_evals = 1
    if not np.isfinite(f) or g is None:
        raise NumericalError("objective is not finite at the starting point")
    g = np.asarray(g, dtype=float)
    nvar = x.size
    H = np.eye(nvar)
    fresh_H = True
    trace = [(float(f), float(np.max(np.abs(g))))] if cfg.record_trace else []
    ls = _LineSearch(fun, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_line_search_steps)
    ls_failures = skipped = 0
    reset_pending = False
    reason, converged, it = "max-iters", False, 0

    if np.max(np.abs(g)) < cfg.grad_inf_tol:
        return OptimResult(x, float(f), g, True, "gradient", 0, n_evals, 0, 0, trace)

    while it < cfg.max_iters:
        d = -H @ g
        if g @ d >= 0:
            H = np.eye(nvar)
            fresh_H = True
            d = -g
        a0 = min(1.0, 1.0 / np.linalg.norm(g)) if fresh_H else 1.0
        out = ls.search(x, f, g, d, a0)
        n_evals += ls.evals
        if out is None:
            ls_failures += 1
            if reset_pending or fresh_H:
                reason = "line-search"
                break
            log.debug("line search failed at iteration %d; resetting inverse Hessian", it)
            H = np.eye(nvar)
            fresh_H = True
            reset_pending = True
            continue
        reset_pending = False
        a, f_new, g_new, _ = out
        it += 1
        s = a * d
        y = g_new - g
        f_old = f
        x, f, g = x + s, f_new, g_new
        if cfg.record_trace:
            trace.append((float(f), float(np.max(np.abs(g)))))

        sy = float(s @ y)
        if sy > CURVATURE_SKIP * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh_H:
                H = np.eye(nvar) * (sy / float(y @ y))
                fresh_H = False
            rho = 1.0 / sy
            Hy = H @ y
            H = (H + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
                 - rho * (np.outer(Hy, s) + np.outer(s, Hy)))
            H = 0.5 * (H + H.T)
        else:
            skipped += 1

        if np.max(np.abs(g)) < cfg.grad_inf_tol:
            reason, converged = "gradient", True
            break
        gate = cfg.nll_change_grad_gate
        if abs(f_old - f) < cfg.nll_abs_tol and (gate is None or np.max(np.abs(g)) < gate):
            reason, converged = "nll-change", True
            break

    return OptimResult(x, float(f), g, converged, reason, it, n_evals, ls_failures, skipped,
                       trace)


def fit(data, basis, Q, p, config=None, eval_mode="continuous", x0=None):
    """Maximum-likelihood fit of ``p`` components with ``Q`` basis functions.

    ``data`` must already be centred. Points where the Gram-Schmidt map
    loses rank or the likelihood overflows are treated as +inf, so the line
    search backs away from them. With ``config.n_restarts > 1`` the fit is
    repeated from fresh seeds (``seed + 7919 r``) and the converged run with
    the lowest objective kept. If none of those converged, up to
    ``config.max_retries`` further seeds are tried, stopping at the first
    converged run; ``FitResult.attempts`` records how many starts were used.

    Raises
    ------
    FitFailedError
        If no restart yields a finite objective at its starting point.
    """
    cfg = config or OptimConfig()
    if basis.Q != Q:
        raise InputError(f"basis has Q={basis.Q}, requested Q={Q}")
    if not Q >= p >= 1:
        raise InputError(f"need Q >= p >= 1, got Q={Q}, p={p}")
    lik = Likelihood(data, basis, eval_mode)

    def fun(x):
        try:
            v, gp = lik.value_and_grad(ParamVector.from_flat(x, Q, p))
        except NumericalError:
            return np.inf, None
        return v, gp.flatten()

    best = None
    errors = []
    attempts = 0
    r = 0
    while r < cfg.n_restarts or (r < cfg.n_restarts + cfg.max_retries
                                 and not (best and best.converged)):
        seed = cfg.seed + 7919 * r
        start = init_params(Q, p, seed) if (x0 is None or r > 0) else x0
        r += 1
        attempts += 1
        t0 = time.perf_counter()
        try:
            res = bfgs_minimize(fun, start.flatten(), cfg)
        except NumericalError as exc:
            errors.append(str(exc))
            continue
        fr = FitResult(
            params=ParamVector.from_flat(res.x, Q, p), nll_value=res.fun,
            converged=res.converged, reason=res.reason, iterations=res.iterations,
            ls_failures=res.ls_failures, n_evals=res.n_evals, seed=seed,
            seconds=time.perf_counter() - t0, trace=res.trace,
        )
        if not fr.converged:
            log.info("Q=%d p=%d seed %d stopped unconverged (%s)", Q, p, seed, fr.reason)
        # a converged run beats an unconverged one; otherwise lowest objective
        if best is None or (fr.converged, -fr.nll_value) > (best.converged, -best.nll_value):
            best = fr
    if best is None:
        raise FitFailedError(f"all {attempts} starts failed: {'; '.join(errors)}")
    best.attempts = attempts
    return best
