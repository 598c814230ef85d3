import pytest

_criteria: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, [title, True, 0])
    if rep.when == "call" or rep.failed:
        entry[1] = entry[1] and rep.passed
        entry[2] += rep.when == "call"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok, ran = _criteria[n]
        verdict = "PASS" if ok and ran else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}")
