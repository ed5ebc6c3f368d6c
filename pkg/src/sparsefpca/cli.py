"""Command-line interface: ``sparsefpca {fit,select,simulate,bench,predict}``.

Settings come from built-in defaults, then an optional JSON ``--config``
document, then explicit flags. Config keys are the flag names with
underscores (``--q-range`` is ``q_range``). Outputs go to ``--out``, which
defaults to ``$SPARSEFPCA_OUTDIR`` or the current directory.

Exit status: 0 on success, 1 on numerical failure, 2 on input, I/O or
configuration errors.
"""

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .basis import make_basis, make_grid
from .bench import BENCH_OPTIM, BenchConfig, run_bench
from .dataset import center, estimate_mean, load_csv, write_csv
from .errors import FpcaError, InputError, NumericalError
from .infer import build_model, predict_with_bands
from .metrics import write_rows
from .optim import OptimConfig, fit
from .persist import (load_model, save_model, write_eigenfunctions, write_predictions,
                      write_scores)
from .select import STRATEGIES, SelectConfig, select, write_selection_csv
from .simulate import SETTINGS, SimSpec, make_truth, simulate_dataset, write_truth

log = logging.getLogger("sparsefpca")

OUTDIR_ENV = "SPARSEFPCA_OUTDIR"

DEFAULTS = {
    "input": None, "id_col": "id", "t_col": "t", "y_col": "y", "domain": None,
    "basis": "bspline", "degree": 3, "q": 10, "p": 3, "m_grid": 101, "n_bins": 20,
    "eval_mode": "continuous", "force": False, "trace": False,
    "q_range": "5:11", "p_range": "2:6", "strategy": "grid", "cv_folds": 5,
    "seed": 0, "jobs": 1, "n_restarts": 1, "max_retries": 0, "max_iters": 500, "grad_tol": 1e-6,
    "nll_tol": 1e-5, "out": None, "no_plots": False,
    "process": "eggcrate", "setting": 2, "n": None, "l": None, "u": None, "sigma2": None,
    "replicates": 20, "model": None, "grid_size": 101, "alpha": 0.05,
}

# Per-command overrides of DEFAULTS (still below --config and flags). Replicated
# benchmarks get a larger iteration budget plus retries so that slow B-spline
# fits are not counted as failures of the selection rule.
COMMAND_DEFAULTS = {"bench": {"max_iters": BENCH_OPTIM.max_iters,
                              "max_retries": BENCH_OPTIM.max_retries}}


def parse_range(text):
    """``'5:11'`` (inclusive), ``'5,7,9'`` or a list of ints."""
    if isinstance(text, (list, tuple)):
        vals = [int(v) for v in text]
    elif isinstance(text, int):
        vals = [text]
    else:
        text = str(text).strip()
        try:
            if ":" in text:
                a, b = text.split(":")
                vals = list(range(int(a), int(b) + 1))
            else:
                vals = [int(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise InputError(f"cannot parse range {text!r}; use 'a:b' or 'a,b,c'") from None
    if not vals:
        raise InputError(f"empty range {text!r}")
    return tuple(vals)


def _common(sp):
    g = sp.add_argument_group("common")
    S = argparse.SUPPRESS
    g.add_argument("--config", default=None, help="JSON file of settings")
    g.add_argument("--out", default=S, help=f"output directory (default ${OUTDIR_ENV} or .)")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--jobs", type=int, default=S, help="parallel candidate fits")
    g.add_argument("--no-plots", action="store_true", default=S, help="skip PNG figures")
    g.add_argument("--n-restarts", type=int, default=S)
    g.add_argument("--max-retries", type=int, default=S,
                   help="extra seeds tried when no start converged")
    g.add_argument("--max-iters", type=int, default=S)
    g.add_argument("--grad-tol", type=float, default=S)
    g.add_argument("--nll-tol", type=float, default=S)
    g.add_argument("-v", "--verbose", action="count", default=0)


def _data_args(sp, need_input=True):
    S = argparse.SUPPRESS
    sp.add_argument("--input", default=S, help="CSV with id,t,y columns")
    sp.add_argument("--id-col", default=S)
    sp.add_argument("--t-col", default=S)
    sp.add_argument("--y-col", default=S)
    sp.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"), default=S,
                    help="time domain (default: observed range)")


def _model_args(sp):
    S = argparse.SUPPRESS
    sp.add_argument("--basis", choices=("bspline", "fourier"), default=S)
    sp.add_argument("--degree", type=int, default=S, help="B-spline degree")
    sp.add_argument("--m-grid", type=int, default=S, help="quadrature grid size M")
    sp.add_argument("--n-bins", type=int, default=S, help="bins for the mean estimate")
    sp.add_argument("--eval-mode", choices=("continuous", "interp"), default=S)


def _range_args(sp):
    S = argparse.SUPPRESS
    sp.add_argument("--q-range", default=S, help="e.g. 5:11 or 5,8,10")
    sp.add_argument("--p-range", default=S, help="e.g. 2:6")
    sp.add_argument("--strategy", choices=STRATEGIES, default=S)
    sp.add_argument("--cv-folds", type=int, default=S)


def _sim_args(sp):
    S = argparse.SUPPRESS
    sp.add_argument("--process", choices=("eggcrate", "matern", "bspline_pow", "bspline_spiked"),
                    default=S)
    sp.add_argument("--setting", type=int, choices=sorted(SETTINGS), default=S)
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--l", type=int, default=S, help="minimum observations per subject")
    sp.add_argument("--u", type=int, default=S, help="maximum observations per subject")
    sp.add_argument("--sigma2", type=float, default=S)


def build_parser():
    ap = argparse.ArgumentParser(prog="sparsefpca", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    sp = sub.add_parser("fit", help="fit one (Q, p) model")
    _data_args(sp)
    _model_args(sp)
    sp.add_argument("--q", type=int, default=S, help="number of basis functions")
    sp.add_argument("--p", type=int, default=S, help="number of components")
    sp.add_argument("--force", action="store_true", default=S,
                    help="save the model even if the optimiser did not converge")
    sp.add_argument("--trace", action="store_true", default=S, help="write trace.csv")
    _common(sp)

    sp = sub.add_parser("select", help="choose (Q, p) and fit the winner")
    _data_args(sp)
    _model_args(sp)
    _range_args(sp)
    _common(sp)

    sp = sub.add_parser("simulate", help="draw a sparse dataset from a known process")
    _sim_args(sp)
    _common(sp)

    sp = sub.add_parser("bench", help="replicated simulation benchmark")
    _sim_args(sp)
    _model_args(sp)
    _range_args(sp)
    sp.add_argument("--replicates", type=int, default=S)
    _common(sp)

    sp = sub.add_parser("predict", help="scores and trajectories with bands")
    sp.add_argument("--model", default=S, help="model.json from fit/select")
    _data_args(sp)
    sp.add_argument("--grid-size", type=int, default=S, help="evaluation points per subject")
    sp.add_argument("--alpha", type=float, default=S, help="band level (default 0.05)")
    _common(sp)
    return ap


def resolve(args):
    """Merge defaults, the JSON config file and explicit flags."""
    cfg = dict(DEFAULTS)
    ns = vars(args)
    cfg.update(COMMAND_DEFAULTS.get(ns.get("command"), {}))
    if ns.get("config"):
        path = Path(ns["config"])
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {str(path)!r} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(doc)
    for k, v in ns.items():
        if k in DEFAULTS:
            cfg[k] = v
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUTDIR_ENV) or "."
    return cfg


def _optim(cfg):
    return OptimConfig(max_iters=int(cfg["max_iters"]), grad_inf_tol=float(cfg["grad_tol"]),
                       nll_abs_tol=float(cfg["nll_tol"]), seed=int(cfg["seed"]),
                       n_restarts=int(cfg["n_restarts"]), max_retries=int(cfg["max_retries"]))


def _select_cfg(cfg):
    return SelectConfig(basis=cfg["basis"], degree=int(cfg["degree"]), M=int(cfg["m_grid"]),
                        n_bins=int(cfg["n_bins"]), eval_mode=cfg["eval_mode"],
                        optim=_optim(cfg), jobs=int(cfg["jobs"]),
                        cv_folds=int(cfg["cv_folds"]), cv_seed=int(cfg["seed"]))


def _outdir(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {str(out)!r}: {exc.strerror}") from None
    return out


def _load(cfg):
    if not cfg["input"]:
        raise InputError("--input is required")
    return load_csv(cfg["input"], cfg["id_col"], cfg["t_col"], cfg["y_col"], cfg["domain"])


def _echo(cfg, keys):
    return {k: cfg[k] for k in keys}


MODEL_KEYS = ("basis", "degree", "m_grid", "n_bins", "eval_mode", "seed", "n_restarts",
              "max_retries", "max_iters", "grad_tol", "nll_tol")


def _save_outputs(model, out, cfg):
    save_model(model, out / "model.json")
    write_eigenfunctions(model, out / "eigenfunctions.csv")
    if not cfg["no_plots"]:
        from .plotting import plot_eigenfunctions
        plot_eigenfunctions(model, out / "eigenfunctions.png")


def cmd_fit(cfg):
    data = _load(cfg)
    Q, p = int(cfg["q"]), int(cfg["p"])
    if Q < p:
        raise InputError(f"need Q >= p, got Q={Q}, p={p}")
    out = _outdir(cfg)
    mean = estimate_mean(data, int(cfg["n_bins"]))
    basis = make_basis(cfg["basis"], Q, make_grid(int(cfg["m_grid"])), degree=int(cfg["degree"]))
    res = fit(center(data, mean), basis, Q, p, _optim(cfg), cfg["eval_mode"])
    if cfg["trace"]:
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "nll", "grad_inf"])
            for i, (f, g) in enumerate(res.trace):
                w.writerow([i, repr(float(f)), repr(float(g))])
    if not res.converged:
        log.warning("fit did not converge: %s after %d iterations", res.reason, res.iterations)
    model = build_model(res, basis, mean, (data.domain_min, data.domain_max),
                        force=bool(cfg["force"]),
                        config=_echo(cfg, MODEL_KEYS + ("q", "p")))
    _save_outputs(model, out, cfg)
    print(f"fit Q={Q} p={p}: nll={res.nll_value:.6f} converged={res.converged} "
          f"({res.reason}, {res.iterations} iterations)")
    return 0


def cmd_select(cfg):
    data = _load(cfg)
    out = _outdir(cfg)
    scfg = _select_cfg(cfg)
    mean = estimate_mean(data, scfg.n_bins)
    res = select(data, parse_range(cfg["q_range"]), parse_range(cfg["p_range"]),
                 cfg["strategy"], scfg, mean)
    write_selection_csv(res, out / "selection.csv")
    best = res.best
    basis = make_basis(scfg.basis, best.Q, make_grid(scfg.M), degree=scfg.degree)
    echo = _echo(cfg, MODEL_KEYS + ("q_range", "p_range", "strategy", "cv_folds"))
    model = build_model(best.fit, basis, mean, (data.domain_min, data.domain_max),
                        extra={"strategy": res.strategy, "aic": best.aic,
                               "cv": best.cv_score}, config=echo)
    _save_outputs(model, out, cfg)
    if not cfg["no_plots"]:
        from .plotting import plot_selection
        plot_selection(res, out / "selection.png")
    failed = sum(not c.converged for c in res.candidates)
    print(f"{res.strategy}: {res.n_fits} candidates ({failed} not converged); "
          f"chosen Q={best.Q} p={best.p}")
    return 0


def _sim_spec(cfg):
    n, l, u, s2 = SETTINGS[int(cfg["setting"])]
    pick = lambda key, base: base if cfg[key] is None else cfg[key]
    return SimSpec(cfg["process"], int(pick("n", n)), int(pick("l", l)), int(pick("u", u)),
                   float(pick("sigma2", s2)), int(cfg["seed"]))


def cmd_simulate(cfg):
    spec = _sim_spec(cfg)
    out = _outdir(cfg)
    sim = simulate_dataset(spec, make_truth(spec.process, seed=spec.seed))
    write_csv(sim.data, out / "data.csv")
    write_truth(sim, out / "truth.json")
    with open(out / "latent.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "x"])
        for s, row in zip(sim.data, sim.latent_ref):
            for t, x in zip(sim.ref_grid, row):
                w.writerow([s.id, repr(float(t)), repr(float(x))])
    print(f"simulated {spec.n} subjects from {spec.process} (seed {spec.seed})")
    return 0


def cmd_bench(cfg):
    out = _outdir(cfg)
    spec = _sim_spec(cfg)
    bcfg = BenchConfig(process=spec.process, setting=None, n=spec.n, l=spec.l, u=spec.u,
                       sigma2=spec.sigma2, replicates=int(cfg["replicates"]),
                       seed=int(cfg["seed"]), strategy=cfg["strategy"],
                       Q_range=parse_range(cfg["q_range"]), p_range=parse_range(cfg["p_range"]),
                       select=_select_cfg(cfg))

    def progress(row):
        log.info("replicate %d: Q=%s p=%s rmse_phi1=%.4f (%.1fs)", row["replicate"],
                 row["Q"], row["p"], row["rmse_phi1"], row["seconds"])

    res = run_bench(bcfg, progress)
    write_rows(res.rows, out / "metrics.csv")
    write_rows(res.summary(), out / "summary.csv")
    if not cfg["no_plots"]:
        from .plotting import plot_bench
        plot_bench(res.rows, out / "bench.png")
    print(f"{len(res.rows)} replicates, convergence rate {res.convergence_rate:.3f} "
          f"({res.n_converged}/{res.n_fits} fits, {res.n_retried} needed a retry), "
          f"{res.seconds:.1f}s")
    return 0


def cmd_predict(cfg):
    if not cfg["model"]:
        raise InputError("--model is required")
    model = load_model(cfg["model"])
    domain = cfg["domain"] if cfg["domain"] is not None else model.domain
    data = load_csv(cfg["input"], cfg["id_col"], cfg["t_col"], cfg["y_col"], domain) \
        if cfg["input"] else None
    if data is None:
        raise InputError("--input is required")
    if (data.domain_min, data.domain_max) != tuple(model.domain):
        raise InputError(f"data domain {(data.domain_min, data.domain_max)} differs from the "
                         f"model domain {tuple(model.domain)}")
    size = int(cfg["grid_size"])
    if size < 2:
        raise InputError("--grid-size must be at least 2")
    out = _outdir(cfg)
    preds = predict_with_bands(model, data, np.linspace(0.0, 1.0, size), float(cfg["alpha"]))
    write_predictions(preds, out / "predictions.csv", model.domain)
    write_scores(preds, out / "scores.csv")
    if not cfg["no_plots"]:
        from .plotting import plot_predictions
        plot_predictions(preds, data, out / "predictions.png", model.domain)
    print(f"predicted {len(preds)} subjects on {size} points (alpha={cfg['alpha']})")
    return 0


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate,
            "bench": cmd_bench, "predict": cmd_predict}


def _origin(exc):
    """Module (inside this package) where ``exc`` was raised."""
    name = "sparsefpca"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("sparsefpca."):
            name = mod
    return name.rsplit(".", 1)[-1]


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if cfg["domain"] is not None:
            cfg["domain"] = tuple(float(v) for v in cfg["domain"])
        return COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"sparsefpca: {_origin(exc)}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"sparsefpca: {_origin(exc)}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sparsefpca: io: {exc}", file=sys.stderr)
        return 2
    except FpcaError as exc:  # pragma: no cover - every subclass is handled above
        print(f"sparsefpca: {_origin(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
