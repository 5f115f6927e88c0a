import numpy as np
import pytest

from gradpipe.tensor import Tensor, default_dtype

GOLDEN = __import__("pathlib").Path(__file__).parent / "golden"


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


def numeric_grad(fn, arrays, i, eps=1e-6):
    """Central differences of scalar ``fn(*arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = fn(*arrays)
        x[idx] = old - eps
        lo = fn(*arrays)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(1.0, np.linalg.norm(b))


def gradcheck(build, arrays, eps=1e-6):
    """Largest relative error between tape gradients and central differences.

    ``build(*tensors)`` returns a scalar Tensor; arrays are float64 and are
    perturbed in place during the check.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def value(*arrs):
        return float(build(*[Tensor(a.copy()) for a in arrs]).item())

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*ts).backward()
    worst = 0.0
    for i, t in enumerate(ts):
        fd = numeric_grad(value, arrays, i, eps)
        ad = t.grad.data if t.grad is not None else np.zeros_like(fd)
        worst = max(worst, rel_err(ad, fd))
    return worst


_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_")[1]
    if report.when == "call" or report.failed:
        _ACCEPTANCE[name] = "PASS" if report.passed and _ACCEPTANCE.get(name) != "FAIL" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        num, _, label = name.partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {_ACCEPTANCE[name]}  {label}")
