import numpy as np
import pytest

from lscnn import _kernels_py, kernels

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    if request.param == "python":
        for name in ("im2col", "col2im", "maxpool_forward", "maxpool_backward"):
            monkeypatch.setattr(kernels, name, getattr(_kernels_py, name))
        monkeypatch.setattr(kernels, "bn_relu_forward", None)
        monkeypatch.setattr(kernels, "bn_relu_backward", None)
    return request.param


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=0.0):
    """||a - b|| / (||a|| + ||b||), with the denominator floored at ``floor``.

    The floor matters for gradients that are exactly zero in theory (a conv
    bias feeding batchnorm), where both sides are pure rounding noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one summary line for an acceptance criterion."""
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
