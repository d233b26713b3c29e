from collections import defaultdict

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        # an expected failure still counts as FAIL for the criterion
        passed = report.passed and not hasattr(report, "wasxfail")
        _outcomes[number].append((report.nodeid.split("::")[-1], passed))


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        runs = _outcomes[number]
        verdict = "PASS" if all(ok for _, ok in runs) else "FAIL"
        names = ", ".join(name for name, _ in runs)
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  ({names})")
