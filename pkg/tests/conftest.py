import time

import pytest

_outcomes: dict[int, list] = {}
_start = [0.0]

SUITE_BUDGET = 300.0


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_sessionstart(session):
    _start[0] = time.perf_counter()


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None or (report.when != "call" and report.passed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _outcomes.setdefault(number, []).append((report.nodeid, report.passed, detail))


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    elapsed = time.perf_counter() - _start[0]
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        rows = _outcomes[number]
        ok = all(passed for _, passed, _ in rows)
        details = "; ".join(d for _, _, d in rows if d)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}"
                                    + (f" ({details})" if details else ""))
    terminalreporter.write_line(f"suite runtime {elapsed:.1f} s (budget {SUITE_BUDGET:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _start[0]
    if session.config.option.collectonly or session.testscollected < 100:
        return
    if elapsed > SUITE_BUDGET and exitstatus == 0:
        session.exitstatus = 1
