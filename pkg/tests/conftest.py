import os

# single-threaded BLAS keeps floating-point reductions reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from selfembed import _accel, assignment, geometry  # noqa: E402

_CRITERIA = {}


def record_criterion(number, passed, detail):
    """Remember one acceptance result and echo it immediately."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once with the compiled kernels and once with the numpy fallbacks."""
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not available")
    flag = request.param == "numba"
    monkeypatch.setattr(geometry, "use_numba", lambda: flag)
    monkeypatch.setattr(assignment, "use_numba", lambda: flag)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
