import functools

import pytest

from dualforge import dataio


@functools.lru_cache(maxsize=None)
def synthetic(n=2000, d=50, density=0.3, seed=42, label_noise=0.1):
    return dataio.gen_synthetic(n, d, density, seed, label_noise)


@pytest.fixture(scope="session")
def default_data():
    """The desk-scale default instance: n=2000, d=50, density 0.3, seed 42."""
    return synthetic()


@pytest.fixture(scope="session")
def small_data():
    return synthetic(120, 8, 0.5, 3)


# one pass/fail line per acceptance criterion, printed after the run
_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        parts = name.split("[")[0].split("_")
        key = int(parts[2])
        prev_ok, label = _CRITERIA.get(key, (True, " ".join(parts[3:])))
        _CRITERIA[key] = (prev_ok and report.outcome == "passed", label)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        ok, label = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>2} {'PASS' if ok else 'FAIL'}  {label}")
