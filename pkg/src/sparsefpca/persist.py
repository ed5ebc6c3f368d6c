"""JSON model files and the CSV outputs derived from a fitted model.

A model file stores only what cannot be recomputed: the basis
description, the coefficients ``Ctilde`` of the continuous eigenfunction
representation, eigenvalues, noise variance, the mean spline and the
domain. Grid eigenfunctions are rebuilt on load. Floats are written with
``repr`` so that load followed by save reproduces the file byte for byte.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .basis import make_basis, make_grid
from .dataset import MeanFunction
from .errors import InputError
from .infer import model_from_representation

SCHEMA_VERSION = 1


def _plain(obj):
    """Convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def model_to_dict(model):
    basis = model.basis
    spec = basis.spec()
    return {
        "schema_version": SCHEMA_VERSION,
        "basis": {k: spec[k] for k in ("kind", "Q", "degree", "knots", "gram_refine") if k in spec},
        "grid": {"M": int(basis.grid.M)},
        "Ctilde": _plain(model.Ctilde),
        "eigenvalues": _plain(model.lam),
        "sigma2": float(model.sigma2),
        "mean": {"knots": _plain(model.mean.knots), "values": _plain(model.mean.values)},
        "domain": _plain(model.domain),
        "diagnostics": _plain(model.diagnostics),
        "config": _plain(model.config),
    }


def dumps(model):
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps(model), encoding="utf-8")


def model_from_dict(doc):
    try:
        version = doc["schema_version"]
        if version != SCHEMA_VERSION:
            raise InputError(f"unsupported model schema version {version!r}")
        b = doc["basis"]
        basis = make_basis(b["kind"], int(b["Q"]), make_grid(int(doc["grid"]["M"])),
                           degree=int(b.get("degree") or 3), gram_refine=int(b.get("gram_refine", 1)))
        if b["kind"] == "bspline" and not np.allclose(basis.knots, b["knots"], rtol=0, atol=1e-12):
            raise InputError("stored knot vector does not match the rebuilt basis")
        mean = MeanFunction(doc["mean"]["knots"], doc["mean"]["values"])
        return model_from_representation(
            basis, np.array(doc["Ctilde"], dtype=float), np.array(doc["eigenvalues"], dtype=float),
            float(doc["sigma2"]), mean, tuple(doc["domain"]), doc.get("diagnostics"),
            doc.get("config"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed model file: {exc!r}") from None


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read model file {str(path)!r}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{str(path)!r} is not valid JSON: {exc}") from None
    return model_from_dict(doc)


def _num(v):
    return repr(float(v))


def write_eigenfunctions(model, path):
    """Grid eigenfunction values: ``t,phi_1..phi_p`` (t in original units)."""
    lo, hi = model.domain
    t = lo + model.grid.points * (hi - lo)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"phi_{k + 1}" for k in range(model.p)])
        for i in range(t.size):
            w.writerow([_num(t[i])] + [_num(v) for v in model.Phi[i]])


def write_predictions(preds, path, domain=(0.0, 1.0)):
    """``id,t,yhat,lo,hi`` with one row per subject and evaluation point."""
    lo_d, hi_d = domain
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "yhat", "lo", "hi"])
        for pr in preds:
            t = lo_d + pr.t * (hi_d - lo_d)
            for j in range(t.size):
                w.writerow([pr.id, _num(t[j]), _num(pr.yhat[j]), _num(pr.lo[j]), _num(pr.hi[j])])


def write_scores(preds, path):
    """``id,xi_1..xi_p``."""
    p = preds[0].xi.size if preds else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"xi_{k + 1}" for k in range(p)])
        for pr in preds:
            w.writerow([pr.id] + [_num(v) for v in pr.xi])
