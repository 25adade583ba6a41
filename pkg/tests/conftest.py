import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for number, title in getattr(report, "criteria", ()):
        entry = _results.setdefault(number, [title, True, [], []])
        entry[3].extend(v for k, v in report.user_properties if k == "measured")
        if not report.passed:
            entry[1] = False
            entry[2].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report.criteria = [tuple(m.args) for m in item.iter_markers("criterion")]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, ok, failed, measured = _results[number]
        suffix = "" if ok else f"  (failed: {', '.join(failed)})"
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}{suffix}")
        for line in measured:
            terminalreporter.write_line(f"      {line}")
