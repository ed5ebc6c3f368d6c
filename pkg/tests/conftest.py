import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sparsefpca.basis import make_basis, make_grid
from sparsefpca.dataset import SparseDataset, Subject, center, estimate_mean
from sparsefpca.infer import build_model
from sparsefpca.model import ParamVector
from sparsefpca.optim import OptimConfig, fit
from sparsefpca.simulate import SimSpec, make_truth, simulate_dataset


def random_dataset(n, m_max, seed, m_min=1):
    """Small random centred dataset with sorted uniform times."""
    rng = np.random.default_rng(seed)
    subs = []
    for i in range(n):
        m = int(rng.integers(m_min, m_max + 1))
        t = np.sort(rng.uniform(0, 1, m))
        subs.append(Subject(str(i), t, rng.normal(size=m)))
    return SparseDataset(tuple(subs))


def random_params(Q, p, seed):
    rng = np.random.default_rng(seed)
    return ParamVector(rng.uniform(-1, 1, (Q, p)), rng.normal(0, 0.5, p), rng.normal(-1, 0.3))


@pytest.fixture(scope="session")
def eggcrate_sim():
    return simulate_dataset(SimSpec.setting(2, seed=11), make_truth("eggcrate"))


@pytest.fixture(scope="session")
def eggcrate_model(eggcrate_sim):
    """Fourier Q=5, p=3 fit on one Setting-2 egg-crate replicate."""
    data = eggcrate_sim.data
    mean = estimate_mean(data)
    basis = make_basis("fourier", 5, make_grid(101))
    res = fit(center(data, mean), basis, 5, 3, OptimConfig(seed=11, max_iters=2000))
    return build_model(res, basis, mean)


@pytest.fixture
def criterion(request, capsys):
    """Record one acceptance line; printed live and again in the summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
