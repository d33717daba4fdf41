"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""

import pytest

_LINES = {}  # nodeid -> {"name", "detail", "passed"}


@pytest.fixture
def criterion(request):
    """Call ``criterion(name, detail)`` to label the current acceptance test."""
    entry = _LINES.setdefault(request.node.nodeid,
                              {"name": request.node.name, "detail": "", "passed": False})

    def record(name, detail=""):
        entry["name"], entry["detail"] = name, detail

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.nodeid in _LINES:
        _LINES[item.nodeid]["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for e in _LINES.values():
        detail = f"  ({e['detail']})" if e["detail"] else ""
        terminalreporter.write_line(f"{'PASS' if e['passed'] else 'FAIL'}  {e['name']}{detail}")
