import numpy as np
import pytest

from tileforge import _accel, kernels

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel backend by rebinding the public kernel names."""
    table = kernels.NUMBA_KERNELS if request.param == "numba" else kernels.NUMPY_KERNELS
    for name, fn in table.items():
        monkeypatch.setattr(kernels, name, fn)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
