import numpy as np
import pytest

from fluidsolid.mesh import build_rect_mesh
from fluidsolid.physics import ModelParams


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def unit_mesh():
    return build_rect_mesh(1.0, 1.0, 1, 1)


@pytest.fixture
def small_mesh():
    return build_rect_mesh(2.0, 1.0, 4, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_OUTCOMES = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" in report.nodeid:
        num = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
        failed = report.failed or (report.when == "call" and report.outcome != "passed")
        if report.when == "call" or failed:
            _OUTCOMES[num] = _OUTCOMES.get(num, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    from _util import ACCEPTANCE_CHECKS

    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        checks = ACCEPTANCE_CHECKS.get(num, [])
        detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({info})" for name, ok, info in checks)
        verdict = "PASS" if _OUTCOMES[num] else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict} | {detail or 'no checks recorded'}")
