import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

REPO = Path(__file__).resolve().parents[1]

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(analytic, numeric):
    """Norm-based relative error between gradient arrays."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()), 1e-12)
    return np.linalg.norm((analytic - numeric).ravel()) / denom


def fd_param_grads(layer, loss_fn, step=1e-4):
    """Central-difference gradients of loss_fn() w.r.t. every layer parameter."""
    grads = {}
    for name, w, _ in layer.param_items():
        fd = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            old = w[idx]
            w[idx] = old + step
            hi = loss_fn()
            w[idx] = old - step
            lo = loss_fn()
            w[idx] = old
            fd[idx] = (hi - lo) / (2.0 * step)
            it.iternext()
        grads[name] = fd
    return grads


def fd_input_grad(x, loss_fn, step=1e-4):
    fd = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        hi = loss_fn()
        x[idx] = old - step
        lo = loss_fn()
        x[idx] = old
        fd[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return fd
