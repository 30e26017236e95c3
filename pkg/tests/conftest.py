import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    if rep.when == "call" or rep.failed:
        prev = _results.get(key, "PASS")
        _results[key] = "FAIL" if rep.failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), verdict in sorted(_results.items()):
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
