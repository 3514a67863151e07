import pytest

_CRITERIA = []
_SETUP_SECONDS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "setup":
        _SETUP_SECONDS[item.nodeid] = report.duration
    failed_early = report.when == "setup" and not report.passed
    if report.when == "call" or failed_early:
        number, title = marker.args
        seconds = report.duration + (_SETUP_SECONDS.get(item.nodeid, 0.0) if report.when == "call" else 0.0)
        _CRITERIA.append((number, title, "PASS" if report.passed else "FAIL", seconds))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, seconds in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title} ({seconds:.1f}s)")
