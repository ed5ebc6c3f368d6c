"""Sparse longitudinal observations: loading, validation and mean estimation."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InputError


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subject:
    """One subject's observations on the rescaled domain [0, 1]."""

    id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        y = _frozen(self.values)
        if t.ndim != 1 or t.shape != y.shape:
            raise InputError(f"subject {self.id!r}: times and values must be 1-D of equal length")
        if t.size == 0:
            raise InputError(f"subject {self.id!r} has no observations")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise InputError(f"subject {self.id!r} has non-finite observations")
        if np.any(np.diff(t) < 0):
            raise InputError(f"subject {self.id!r}: times must be non-decreasing")
        if t[0] < 0.0 or t[-1] > 1.0:
            raise InputError(f"subject {self.id!r}: rescaled times must lie in [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)

    @property
    def m(self):
        return self.times.size


@dataclass(frozen=True)
class SparseDataset:
    """Ordered collection of subjects sharing the rescaled domain [0, 1].

    ``domain_min`` and ``domain_max`` record the original time bounds so
    that outputs can be mapped back to the caller's units.
    """

    subjects: tuple
    domain_min: float = 0.0
    domain_max: float = 1.0
    # held-out scoring sets may hold a single subject
    min_subjects: int = field(default=2, repr=False, compare=False)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if len(subjects) < max(1, self.min_subjects):
            raise InputError(f"need at least {self.min_subjects} subjects, got {len(subjects)}")
        if not self.domain_max > self.domain_min:
            raise InputError("domain_max must exceed domain_min")
        object.__setattr__(self, "subjects", subjects)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    @property
    def n(self):
        return len(self.subjects)

    @property
    def ids(self):
        return [s.id for s in self.subjects]

    def pooled(self):
        """All (t, y) pairs concatenated in subject order."""
        t = np.concatenate([s.times for s in self.subjects])
        y = np.concatenate([s.values for s in self.subjects])
        return t, y

    def subset(self, indices, min_subjects=2):
        """Dataset restricted to the given subject indices (order kept)."""
        return SparseDataset(
            tuple(self.subjects[i] for i in indices), self.domain_min, self.domain_max,
            min_subjects,
        )

    def to_original(self, t):
        return self.domain_min + np.asarray(t, dtype=float) * (self.domain_max - self.domain_min)

    def to_unit(self, t):
        return (np.asarray(t, dtype=float) - self.domain_min) / (self.domain_max - self.domain_min)


def from_arrays(ids, t, y, domain=None):
    """Build a dataset from flat observation arrays.

    Subjects are grouped by id in order of first appearance and each
    subject's rows are sorted by time (stable, so tied times keep file
    order). Times are rescaled to [0, 1] with ``domain`` = (lo, hi) or, if
    omitted, with the observed minimum and maximum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size == 0:
        raise InputError("no observations")
    if domain is None:
        lo, hi = float(t.min()), float(t.max())
    else:
        lo, hi = map(float, domain)
    if not hi > lo:
        raise InputError(
            f"zero-width time domain: all observations at t={lo!r}" if domain is None
            else f"invalid domain ({lo!r}, {hi!r})"
        )
    if t.min() < lo or t.max() > hi:
        raise InputError(f"observation times fall outside the domain [{lo!r}, {hi!r}]")

    groups = {}
    for k, sid in enumerate(ids):
        groups.setdefault(sid, []).append(k)
    subjects = []
    for sid, rows in groups.items():
        rows = np.asarray(rows)
        order = np.argsort(t[rows], kind="stable")
        rows = rows[order]
        ts = np.clip((t[rows] - lo) / (hi - lo), 0.0, 1.0)
        subjects.append(Subject(str(sid), ts, y[rows]))
    return SparseDataset(tuple(subjects), lo, hi)


def load_csv(path, id_col="id", t_col="t", y_col="y", domain=None):
    """Read an ``id,t,y`` CSV file into a :class:`SparseDataset`.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV file with a header row.
    id_col, t_col, y_col : str
        Column names for subject id, time and measurement.
    domain : (float, float), optional
        Original-unit bounds used for rescaling. Defaults to the observed
        time range.

    Raises
    ------
    InputError
        Missing file, empty file, missing columns, a malformed row (the
        message names the 1-based file line), or a zero-width domain.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            ci, ct, cy = (header.index(c) for c in (id_col, t_col, y_col))
        except ValueError:
            raise InputError(
                f"{path}: header must contain columns {id_col!r}, {t_col!r}, {y_col!r}; got {header}"
            ) from None
        ids, ts, ys = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                sid = row[ci].strip()
                tv = float(row[ct])
                yv = float(row[cy])
            except (IndexError, ValueError):
                raise InputError(f"{path}: malformed row at line {lineno}: {row!r}") from None
            if not sid or not (math.isfinite(tv) and math.isfinite(yv)):
                raise InputError(f"{path}: malformed row at line {lineno}: {row!r}")
            ids.append(sid)
            ts.append(tv)
            ys.append(yv)
    if not ids:
        raise InputError(f"{path}: no observations")
    return from_arrays(ids, ts, ys, domain=domain)


def write_csv(data, path, original_units=True):
    """Write a dataset as ``id,t,y`` rows, subjects in order."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "t", "y"])
        for s in data:
            ts = data.to_original(s.times) if original_units else s.times
            for tv, yv in zip(ts, s.values):
                w.writerow([s.id, repr(float(tv)), repr(float(yv))])


@dataclass(frozen=True)
class MeanFunction:
    """Natural cubic interpolant through binned pooled means.

    Outside the knot range the spline is continued linearly with its
    boundary slope (the natural-spline extension, second derivative zero).
    """

    knots: np.ndarray
    values: np.ndarray
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        if knots.size < 4 or knots.shape != values.shape:
            raise InputError("mean function needs at least 4 knots with matching values")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spline", CubicSpline(knots, values, bc_type="natural"))

    @property
    def coefficients(self):
        """Piecewise-polynomial coefficients, shape (4, n_knots - 1)."""
        return self._spline.c

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        out = self._spline(np.clip(t, lo, hi))
        d = self._spline.derivative()
        out = np.where(t < lo, self.values[0] + d(lo) * (t - lo), out)
        out = np.where(t > hi, self.values[-1] + d(hi) * (t - hi), out)
        return out


def zero_mean():
    """The identically-zero mean function."""
    return MeanFunction(np.linspace(0.0, 1.0, 4), np.zeros(4))


def estimate_mean(data, n_bins=20):
    """Pooled mean via bin averages and natural cubic interpolation.

    Observations from all subjects are pooled and split into ``n_bins``
    equal-width bins on [0, 1]. Each nonempty bin contributes one knot at
    its mean time with value equal to its mean response; empty bins are
    skipped.
    """
    if n_bins < 4:
        raise InputError(f"n_bins must be >= 4, got {n_bins}")
    t, y = data.pooled()
    idx = np.minimum((t * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    keep = counts > 0
    if keep.sum() < 4:
        raise InputError(
            f"only {int(keep.sum())} nonempty bins; a cubic spline mean needs at least 4"
        )
    t_mean = np.bincount(idx, weights=t, minlength=n_bins)[keep] / counts[keep]
    y_mean = np.bincount(idx, weights=y, minlength=n_bins)[keep] / counts[keep]
    return MeanFunction(t_mean, y_mean)


def center(data, mean):
    """Subtract ``mean`` evaluated at each observation time."""
    subjects = tuple(Subject(s.id, s.times, s.values - mean(s.times)) for s in data)
    return SparseDataset(subjects, data.domain_min, data.domain_max, data.min_subjects)
