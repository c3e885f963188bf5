"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for marker in report.keywords:
        if marker.startswith("criterion_"):
            n = int(marker.split("_")[1])
            prev = ACCEPTANCE_RESULTS.get(n, "PASS")
            ACCEPTANCE_RESULTS[n] = prev if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {ACCEPTANCE_RESULTS[n]}")


def pytest_configure(config):
    for n in range(1, 13):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"
