"""Collects the acceptance verdicts and prints them after the test run."""

import pytest

ACCEPTANCE_LINES: dict = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call" and report.failed:
        n = marker.args[0]
        line = ACCEPTANCE_LINES.get(n, "")
        if " PASS " in line or not line:
            # an assertion or error after (or before) the verdict was recorded
            ACCEPTANCE_LINES[n] = (f"criterion {n:2d}: FAIL  "
                                   f"{str(call.excinfo.value).splitlines()[0][:160]}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
