"""Collects acceptance results and prints one PASS/FAIL line per criterion."""
import pytest

_CRITERIA: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[int, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _CRITERIA[item.nodeid] = (mark.kwargs["number"], mark.kwargs["title"])


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    number = _CRITERIA[report.nodeid][0]
    if report.when == "call" or report.failed or report.skipped:
        if report.failed:
            _OUTCOMES[number] = "FAIL"
        elif report.skipped:
            _OUTCOMES.setdefault(number, "SKIP")
        else:
            _OUTCOMES.setdefault(number, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in sorted(set(_CRITERIA.values())):
        outcome = _OUTCOMES.get(number, "NOT RUN")
        terminalreporter.write_line(f"AC{number:<2d} {outcome:<4s} {title}")


@pytest.fixture
def timer():
    import time

    class _Timer:
        def __init__(self):
            self.start = time.perf_counter()

        @property
        def elapsed(self):
            return time.perf_counter() - self.start

    return _Timer()
