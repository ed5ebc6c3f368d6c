"""Accuracy of a fitted model against a known truth.

All comparisons use the 50-point reference grid of the simulation. Raw
squared errors are stored; the x10 / x100 scalings used in summary
tables are applied only when printing.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .infer import covariance_surface, eval_eigenfunctions, predict_with_bands


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def rmse_phi(est, truth):
    """Root mean squared difference, minimised over the sign of ``est``."""
    est, truth = _same_shape(est, truth, "rmse_phi")
    plus = np.sqrt(np.mean((est - truth) ** 2))
    minus = np.sqrt(np.mean((est + truth) ** 2))
    return float(min(plus, minus))


def se(est, truth):
    """Squared error ``(est - truth)^2``."""
    return float((float(est) - float(truth)) ** 2)


se_lambda = se
se_sigma2 = se


def rmse_cov(est, truth):
    """RMS difference of two covariance surfaces on the same grid."""
    est, truth = _same_shape(est, truth, "rmse_cov")
    if est.ndim != 2 or est.shape[0] != est.shape[1]:
        raise InputError("rmse_cov expects square matrices")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def rmse_x(pred, truth, per_subject=False):
    """Reconstruction error over subjects and grid points.

    With ``per_subject=False`` the squared errors are summed over all
    subjects and grid points and divided by the number of grid points
    only, so the value grows like ``sqrt(n)``. ``per_subject=True``
    divides by the number of subjects as well (a pooled RMS).

    Parameters
    ----------
    pred, truth : array_like, shape (n, n_points)
    """
    pred, truth = _same_shape(pred, truth, "rmse_x")
    if pred.ndim != 2:
        raise InputError("rmse_x expects (subjects, points) arrays")
    n, g = pred.shape
    ss = np.sum((pred - truth) ** 2)
    return float(np.sqrt(ss / g / (n if per_subject else 1)))


@dataclass(frozen=True)
class MetricsReport:
    """Errors of one fit. Per-component entries are NaN for components the
    model or the truth does not have."""

    rmse_phi: tuple
    se_lambda: tuple
    rmse_sigma_field: float
    se_sigma2: float
    rmse_x: float
    rmse_x_mean: float
    Q: int = 0
    p: int = 0
    converged: bool = True

    def row(self, n_components=None):
        k = n_components or len(self.rmse_phi)
        pad = lambda v: list(v[:k]) + [float("nan")] * (k - len(v[:k]))
        out = {"Q": self.Q, "p": self.p, "converged": self.converged}
        for i, v in enumerate(pad(self.rmse_phi), 1):
            out[f"rmse_phi{i}"] = v
        for i, v in enumerate(pad(self.se_lambda), 1):
            out[f"se_lambda{i}"] = v
        out.update(rmse_sigma=self.rmse_sigma_field, se_sigma2=self.se_sigma2,
                   rmse_x=self.rmse_x, rmse_x_mean=self.rmse_x_mean)
        return out


def evaluate(model, sim, n_components=3, nugget=False):
    """Compare ``model`` with the truth behind simulated data ``sim``.

    Eigenfunctions are evaluated on the reference grid through the
    continuous representation; component ``k`` of the model is compared
    with component ``k`` of the truth. ``nugget=True`` adds the noise
    variance to the diagonal of the fitted covariance surface before
    comparing it with the (smooth) truth.
    """
    g = sim.ref_grid
    lam_true, phi_true = sim.truth.eigen_on(g)
    k = min(n_components, model.p, len(lam_true))
    phi_est = eval_eigenfunctions(model, g)
    r_phi = [rmse_phi(phi_est[:, j], phi_true[:, j]) for j in range(k)]
    s_lam = [se(model.lam[j], lam_true[j]) for j in range(k)]
    nan = [float("nan")] * (n_components - k)
    cov_est = covariance_surface(model, g, nugget=nugget)
    cov_true = sim.truth.cov(g, g)
    preds = predict_with_bands(model, sim.data, g)
    X = np.array([pr.yhat for pr in preds])
    return MetricsReport(
        tuple(r_phi + nan), tuple(s_lam + nan), rmse_cov(cov_est, cov_true),
        se(model.sigma2, sim.spec.sigma2), rmse_x(X, sim.latent_ref),
        rmse_x(X, sim.latent_ref, per_subject=True), model.Q, model.p,
        bool(model.diagnostics.get("converged", True)),
    )


def summarize(values):
    """Median and interquartile range, ignoring NaN; (nan, nan) if empty."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_rows(rows, path):
    """Write a list of dicts (same keys, first row's order) as CSV."""
    if not rows:
        raise InputError("no rows to write")
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r[k]) for k in keys])


# Table scalings: metric -> factor applied when printing summaries.
SCALE = {"rmse_phi": 100.0, "se_lambda": 10.0, "se_sigma2": 100.0, "rmse_sigma": 1.0,
         "rmse_x": 1.0, "rmse_x_mean": 1.0}


def _scale_for(key):
    for prefix, f in SCALE.items():
        if key == prefix or (key.startswith(prefix) and key[len(prefix):].isdigit()):
            return f
    return 1.0


def summary_rows(rows):
    """Median / IQR of every numeric metric column across replicate rows,
    with the table scaling applied."""
    skip = {"replicate", "seed", "Q", "p", "converged", "seconds", "error"}
    keys = [k for k in rows[0] if k not in skip]
    out = []
    for k in keys:
        f = _scale_for(k)
        med, iqr = summarize([r[k] * f for r in rows if r.get(k) is not None])
        out.append({"metric": k, "scale": f, "median": med, "iqr": iqr,
                    "n": int(sum(np.isfinite(float(r[k])) for r in rows))})
    return out
