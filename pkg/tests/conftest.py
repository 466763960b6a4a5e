import numpy as np
import pytest

from levattn import _backend

CRITERIA = {
    1: "universality against the dense oracle",
    2: "size bound and leverage sum",
    3: "streaming equivalence and memory",
    4: "exact query normalization and op count",
    5: "sampled normalization",
    6: "Lewis weights",
    7: "distributed shard invariance and transcript",
    8: "planted model (stochastic construction)",
    9: "Khatri-Rao identity",
    10: "attention statistics formulas",
    11: "CLI determinism",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    num = getattr(report, "criterion", None)
    if num is None:
        return
    if report.when == "call" or report.failed or (report.when == "setup" and report.skipped):
        prev = _outcomes.get(num, "pass")
        now = "pass" if report.passed else ("skip" if report.skipped else "FAIL")
        _outcomes[num] = "FAIL" if "FAIL" in (prev, now) else ("skip" if "skip" in (prev, now) else "pass")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        if num in _outcomes:
            terminalreporter.write_line(f"criterion {num:2d} [{_outcomes[num]:>4}] {CRITERIA[num]}")


def available_backends():
    names = ["python"]
    if _backend.compiled_kernels is not None:
        names.append("cython")
    return names


@pytest.fixture(params=available_backends())
def kernels(request):
    if request.param == "python":
        return _backend.python_kernels
    return _backend.compiled_kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
