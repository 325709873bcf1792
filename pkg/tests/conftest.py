import sys

import pytest

from drawdown.market import BASELINE, HIGH_DRIFT, derive_constants
from drawdown.surface import ValueSurface


@pytest.fixture(scope="session")
def baseline_surface():
    return ValueSurface(BASELINE)


@pytest.fixture(scope="session")
def high_drift_surface():
    return ValueSurface(HIGH_DRIFT)


@pytest.fixture(scope="session", params=["baseline", "high_drift"])
def surface(request, baseline_surface, high_drift_surface):
    return baseline_surface if request.param == "baseline" else high_drift_surface


@pytest.fixture(scope="session")
def k1():
    return derive_constants(BASELINE)


@pytest.fixture(scope="session")
def k2():
    return derive_constants(HIGH_DRIFT)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        ok, detail = module.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
