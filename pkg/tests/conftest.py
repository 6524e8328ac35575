"""Collects ``@pytest.mark.criterion`` outcomes into one summary line each."""

import pytest

_order = []
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if name not in _outcomes:
        _order.append(name)
        _outcomes[name] = True
    if report.failed or (report.when == "call" and report.skipped):
        _outcomes[name] = False


def pytest_terminal_summary(terminalreporter):
    if not _order:
        return
    terminalreporter.section("acceptance criteria")
    for name in _order:
        terminalreporter.write_line(f"{'PASS' if _outcomes[name] else 'FAIL'}  {name}")
