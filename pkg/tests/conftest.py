import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402
from ordseg import _accel  # noqa: E402

BACKENDS = ["numpy"] + (["numba"] if _accel.numba is not None else [])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running checks (acceptance, timing)")


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(acceptance_log.LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS)
def backend(request):
    with _accel.use_backend(request.param):
        yield request.param
