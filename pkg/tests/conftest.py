"""Per-criterion pass/fail summary for the acceptance module.

Tests tagged ``@pytest.mark.criterion(n, title)`` are grouped by ``n``; a
criterion passes only when every test carrying its tag passes.  One line
per criterion is printed at the end of the session.
"""
import pytest

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n, title = mark.args
        entry = _outcomes.setdefault(n, {"title": title, "failed": [], "passed": []})
        (entry["passed"] if report.passed else entry["failed"]).append(item.name)


def criterion_lines():
    lines = []
    for n in sorted(_outcomes):
        entry = _outcomes[n]
        status = "FAIL" if entry["failed"] else "PASS"
        line = f"criterion {n:2d} {entry['title']}: {status}"
        if entry["failed"]:
            line += " (" + ", ".join(entry["failed"]) + ")"
        lines.append(line)
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = criterion_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
