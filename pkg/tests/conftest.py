import pytest

CRITERIA = {
    1: "cycle-formula exactness",
    2: "LAP optimality vs brute force",
    3: "calibration convergence",
    4: "encoder roundtrip",
    5: "controller overhead arithmetic",
    6: "end-to-end recovery",
    7: "remapping benefit",
    8: "determinism",
    9: "temperature-field invariants",
}

_results: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _results.setdefault(n, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _results:
            continue
        status = "PASS" if all(_results[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n} [{CRITERIA[n]}]: {status}")
