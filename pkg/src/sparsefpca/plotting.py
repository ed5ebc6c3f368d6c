"""Report figures written next to the CSV outputs.

Figures are built with :class:`matplotlib.figure.Figure` directly, so no
interactive backend or pyplot global state is involved.
"""

import numpy as np
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

FIG_DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    return path


def plot_eigenfunctions(model, path):
    """Estimated eigenfunctions on the model grid, labelled by eigenvalue."""
    lo, hi = model.domain
    t = lo + model.grid.points * (hi - lo)
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for k in range(model.p):
        ax.plot(t, model.Phi[:, k], lw=1.6, label=f"$\\phi_{k + 1}$ ($\\lambda$={model.lam[k]:.3g})")
    ax.axhline(0.0, color="0.7", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("eigenfunction")
    ax.set_title(f"{model.basis.kind}, Q={model.Q}, p={model.p}, $\\sigma^2$={model.sigma2:.3g}")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_predictions(preds, data, path, domain=(0.0, 1.0), max_subjects=6):
    """Reconstructed trajectories with bands for the first few subjects."""
    lo, hi = domain
    k = min(max_subjects, len(preds))
    ncol = min(3, k)
    nrow = int(np.ceil(k / ncol))
    fig = Figure(figsize=(3.2 * ncol, 2.6 * nrow))
    obs = {s.id: s for s in data}
    for j in range(k):
        pr = preds[j]
        ax = fig.add_subplot(nrow, ncol, j + 1)
        t = lo + pr.t * (hi - lo)
        ax.fill_between(t, pr.lo, pr.hi, color="C0", alpha=0.2, lw=0)
        ax.plot(t, pr.yhat, color="C0", lw=1.4)
        s = obs.get(pr.id)
        if s is not None:
            ax.plot(lo + s.times * (hi - lo), s.values, "o", color="C3", ms=3)
        ax.set_title(f"id {pr.id}", fontsize=9)
        ax.tick_params(labelsize=7)
    return _save(fig, path)


def plot_selection(result, path):
    """Criterion value per candidate, one line per p."""
    crit = result.criterion
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    ps = sorted({c.p for c in result.candidates})
    for p in ps:
        rows = sorted({(c.Q, getattr(c, "cv_score" if crit == "cv" else "aic"))
                       for c in result.candidates if c.p == p and c.converged})
        rows = [r for r in rows if r[1] is not None]
        if rows:
            q, v = zip(*rows)
            ax.plot(q, v, "o-", ms=4, label=f"p={p}")
    Qs, ps_ = result.chosen
    ax.set_title(f"{result.strategy}: chosen Q={Qs}, p={ps_}")
    ax.set_xlabel("Q")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("CV score" if crit == "cv" else "AIC")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_bench(rows, path, keys=("rmse_phi1", "rmse_phi2", "rmse_phi3")):
    """Box plots of per-replicate metrics (scaled by 100)."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    data, labels = [], []
    for key in keys:
        v = np.array([r.get(key, np.nan) for r in rows], dtype=float) * 100.0
        v = v[np.isfinite(v)]
        if v.size:
            data.append(v)
            labels.append(key)
    if data:
        ax.boxplot(data)
        ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_ylabel("100 x value")
    ax.set_title(f"{len(rows)} replicates")
    return _save(fig, path)
