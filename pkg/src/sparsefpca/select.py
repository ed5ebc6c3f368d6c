"""Choosing the basis size Q and the number of components p.

Three strategies are offered:

* ``grid``: fit every (Q, p) with Q >= p and minimise AIC,
* ``sequential``: pick Q by AIC at the largest p, then p at that Q,
* ``cv``: K-fold cross-validated predictive negative log-likelihood over
  the grid, with subjects (not observations) split into folds.

The AIC charges ``Q p^2 + p + 1`` parameters, which reflects the coupling
the Gram-Schmidt map induces between coefficient columns rather than the
raw ``Q p + p + 1`` count.

Candidate fits are independent; ``jobs > 1`` runs them in a process pool.
Results are always collected in a fixed order so output does not depend
on scheduling.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .basis import make_basis, make_grid
from .dataset import center, estimate_mean
from .errors import FitFailedError, InputError
from .model import Likelihood
from .optim import OptimConfig, fit

log = logging.getLogger(__name__)

STRATEGIES = ("grid", "sequential", "cv")


def aic_penalty(Q, p):
    """Effective parameter count ``Q p^2 + p + 1`` (exact integer)."""
    Q, p = int(Q), int(p)
    return Q * p * p + p + 1


def aic(fit_result, n, Q, p):
    """``n * nll + Q p^2 + p + 1`` where ``nll`` is the per-subject average."""
    v = fit_result if np.isscalar(fit_result) else fit_result.nll_value
    if not np.isfinite(v):
        raise InputError("AIC needs a finite negative log-likelihood")
    return n * float(v) + aic_penalty(Q, p)


@dataclass(frozen=True)
class SelectConfig:
    """Everything a selection run needs besides the data and the ranges.

    ``refit_mean`` re-estimates the mean on each CV training fold instead
    of reusing the full-data estimate.
    """

    basis: str = "fourier"
    degree: int = 3
    M: int = 101
    n_bins: int = 20
    eval_mode: str = "continuous"
    optim: OptimConfig = field(default_factory=OptimConfig)
    jobs: int = 1
    cv_folds: int = 5
    cv_seed: int = 0
    refit_mean: bool = False


@dataclass
class CandidateReport:
    """One (Q, p) candidate.

    ``fit`` is None when the optimiser could not even start (its message
    is in ``error``). ``aic`` is None unless the fit converged.
    """

    Q: int
    p: int
    fit: object
    aic: Optional[float]
    cv_score: Optional[float] = None
    wall_time: float = 0.0
    phase: str = "grid"
    error: Optional[str] = None

    @property
    def converged(self):
        return self.fit is not None and self.fit.converged and self.error is None

    @property
    def nll(self):
        return None if self.fit is None else float(self.fit.nll_value)


@dataclass
class SelectionResult:
    """Outcome of a selection run; ``candidates`` are in evaluation order."""

    chosen: tuple
    candidates: List[CandidateReport]
    strategy: str
    criterion: str = "aic"

    @property
    def best(self):
        for c in self.candidates:
            if (c.Q, c.p) == self.chosen and c.converged:
                return c
        raise LookupError("chosen candidate missing")  # pragma: no cover

    @property
    def n_fits(self):
        return len(self.candidates)

    def table(self):
        """Rows ``(Q, p, nll, aic, cv, converged, seconds)``."""
        return [(c.Q, c.p, c.nll, c.aic, c.cv_score, c.converged, c.wall_time)
                for c in self.candidates]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_selection_csv(result, path):
    with open(path, "w", newline="") as fh:
        fh.write("Q,p,nll,aic,cv,converged,seconds\n")
        for row in result.table():
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fit_job(args):
    data, Q, p, cfg = args
    basis = make_basis(cfg.basis, Q, make_grid(cfg.M), degree=cfg.degree)
    t0 = time.perf_counter()
    try:
        res = fit(data, basis, Q, p, cfg.optim, cfg.eval_mode)
        err = None
    except FitFailedError as exc:
        res, err = None, str(exc)
    return res, err, time.perf_counter() - t0


def _cv_job(args):
    train, test, Q, p, cfg = args
    res, err, secs = _fit_job((train, Q, p, cfg))
    if res is None or not res.converged:
        return None, secs
    basis = make_basis(cfg.basis, Q, make_grid(cfg.M), degree=cfg.degree)
    terms = Likelihood(test, basis, cfg.eval_mode).subject_terms(res.params)
    return float(np.sum(terms)), secs


def _run(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def _check_ranges(Q_range, p_range):
    Q_range = sorted({int(q) for q in Q_range})
    p_range = sorted({int(p) for p in p_range})
    if not Q_range or not p_range:
        raise InputError("Q and p ranges must be nonempty")
    if min(p_range) < 1:
        raise InputError("p must be at least 1")
    return Q_range, p_range


def _prepare(data, cfg, mean):
    if mean is None:
        mean = estimate_mean(data, cfg.n_bins)
    return center(data, mean), mean


def _fit_candidates(cdata, pairs, cfg, phase):
    n = len(cdata)
    out = _run(_fit_job, [(cdata, Q, p, cfg) for Q, p in pairs], cfg.jobs)
    reports = []
    for (Q, p), (res, err, secs) in zip(pairs, out):
        ok = res is not None and res.converged
        if res is not None and not res.converged:
            log.warning("Q=%d p=%d did not converge (%s)", Q, p, res.reason)
        reports.append(CandidateReport(Q, p, res, aic(res, n, Q, p) if ok else None,
                                       wall_time=secs, phase=phase, error=err))
    return reports


def _argmin(reports, key):
    ok = [c for c in reports if c.converged and key(c) is not None]
    if not ok:
        raise FitFailedError("every candidate failed to converge")
    best = min(ok, key=lambda c: (key(c), c.p, c.Q))
    return best.Q, best.p


def grid_select(data, Q_range, p_range, config=None, mean=None):
    """Fit every (Q, p) with Q >= p and return the AIC minimiser.

    Parameters
    ----------
    data : SparseDataset
        Uncentred observations.
    Q_range, p_range : iterable of int
    config : SelectConfig, optional
    mean : MeanFunction, optional
        Estimated from ``data`` when omitted.

    Notes
    -----
    Candidates that do not converge are excluded; ties are broken towards
    smaller p, then smaller Q.
    """
    cfg = config or SelectConfig()
    Q_range, p_range = _check_ranges(Q_range, p_range)
    pairs = [(Q, p) for Q in Q_range for p in p_range if Q >= p]
    if not pairs:
        raise InputError("no (Q, p) pair satisfies Q >= p")
    cdata, mean = _prepare(data, cfg, mean)
    reports = _fit_candidates(cdata, pairs, cfg, "grid")
    return SelectionResult(_argmin(reports, lambda c: c.aic), reports, "grid")


def sequential_select(data, Q_range, p_range, config=None, mean=None):
    """Choose Q by AIC at ``p = max(p_range)``, then p by AIC at that Q.

    Fits ``len(Q_range) + len(p_range)`` candidates; the pair shared by
    both phases is fitted once and reported in both.
    """
    cfg = config or SelectConfig()
    Q_range, p_range = _check_ranges(Q_range, p_range)
    p_max = max(p_range)
    if p_max > min(Q_range):
        raise InputError(f"sequential selection needs max(p)={p_max} <= min(Q)={min(Q_range)}")
    cdata, mean = _prepare(data, cfg, mean)
    phase1 = _fit_candidates(cdata, [(Q, p_max) for Q in Q_range], cfg, "Q")
    Q_star, _ = _argmin(phase1, lambda c: c.aic)
    shared = next(c for c in phase1 if c.Q == Q_star)
    todo = [(Q_star, p) for p in p_range if p != p_max]
    fitted = {(c.Q, c.p): c for c in _fit_candidates(cdata, todo, cfg, "p")}
    phase2 = [fitted[(Q_star, p)] if p != p_max else replace(shared, phase="p")
              for p in p_range]
    _, p_star = _argmin(phase2, lambda c: c.aic)
    return SelectionResult((Q_star, p_star), phase1 + phase2, "sequential")


def cv_folds(n, K, seed=0):
    """Split ``range(n)`` into ``K`` near-equal folds by a seeded shuffle."""
    if K < 2 or n < K:
        raise InputError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, K)]


def cv_select(data, Q_range, p_range, K=None, config=None, mean=None):
    """K-fold cross-validated predictive negative log-likelihood.

    Each fold is fitted on the other subjects and scored by the summed
    per-subject terms of the held-out subjects. A candidate with any
    failed or non-converged training fit is excluded. The full-data fit
    of each candidate is also run so its AIC and parameters are reported.
    """
    cfg = config or SelectConfig()
    K = cfg.cv_folds if K is None else K
    Q_range, p_range = _check_ranges(Q_range, p_range)
    pairs = [(Q, p) for Q in Q_range for p in p_range if Q >= p]
    if not pairs:
        raise InputError("no (Q, p) pair satisfies Q >= p")
    folds = cv_folds(len(data), K, cfg.cv_seed)
    cdata, mean = _prepare(data, cfg, mean)
    fold_sets = []
    for f in folds:
        train_idx = np.setdiff1d(np.arange(len(data)), f)
        if cfg.refit_mean:
            m = estimate_mean(data.subset(train_idx), cfg.n_bins)
            fold_sets.append((center(data.subset(train_idx), m), center(data.subset(f, 1), m)))
        else:
            fold_sets.append((cdata.subset(train_idx), cdata.subset(f, 1)))
    jobs = [(tr, te, Q, p, cfg) for Q, p in pairs for tr, te in fold_sets]
    out = _run(_cv_job, jobs, cfg.jobs)
    reports = _fit_candidates(cdata, pairs, cfg, "cv")
    for j, c in enumerate(reports):
        chunk = out[j * K:(j + 1) * K]
        c.wall_time += sum(s for _, s in chunk)
        vals = [v for v, _ in chunk]
        c.cv_score = None if any(v is None for v in vals) else float(sum(vals))
    return SelectionResult(_argmin(reports, lambda c: c.cv_score), reports, f"cv({K})", "cv")


def select(data, Q_range, p_range, strategy="grid", config=None, mean=None):
    """Dispatch to one of :data:`STRATEGIES`."""
    if strategy == "grid":
        return grid_select(data, Q_range, p_range, config, mean)
    if strategy == "sequential":
        return sequential_select(data, Q_range, p_range, config, mean)
    if strategy == "cv":
        return cv_select(data, Q_range, p_range, None, config, mean)
    raise InputError(f"unknown selection strategy {strategy!r}; choose from {STRATEGIES}")
