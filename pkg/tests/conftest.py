import pytest

_outcomes: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        previous = _outcomes.get(number, ("PASS", title))[0]
        status = "PASS" if report.passed and previous == "PASS" else "FAIL"
        _outcomes[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
