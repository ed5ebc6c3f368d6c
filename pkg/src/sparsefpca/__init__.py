"""Functional principal components for sparse, irregularly observed curves.

Eigenfunctions are fitted by maximum likelihood under a reduced-rank
Gaussian model, with orthonormality enforced by a weighted Gram-Schmidt
reparameterisation of an unconstrained basis expansion.
"""

__version__ = "0.1.0"

from .basis import BasisSystem, make_basis, make_grid
from .dataset import (MeanFunction, SparseDataset, Subject, center, estimate_mean,
                      from_arrays, load_csv)
from .errors import FitFailedError, FpcaError, InputError, NumericalError, RankDeficiencyError
from .infer import FittedModel, build_model, eval_eigenfunctions, predict_with_bands, scores
from .model import Likelihood, ParamVector, nll, nll_grad
from .optim import FitResult, OptimConfig, fit
from .persist import load_model, save_model
from .select import SelectConfig, aic, cv_select, grid_select, sequential_select

__all__ = [
    "BasisSystem", "make_basis", "make_grid",
    "MeanFunction", "SparseDataset", "Subject", "center", "estimate_mean", "from_arrays",
    "load_csv",
    "FitFailedError", "FpcaError", "InputError", "NumericalError", "RankDeficiencyError",
    "FittedModel", "build_model", "eval_eigenfunctions", "predict_with_bands", "scores",
    "Likelihood", "ParamVector", "nll", "nll_grad",
    "FitResult", "OptimConfig", "fit",
    "load_model", "save_model",
    "SelectConfig", "aic", "cv_select", "grid_select", "sequential_select",
]
