"""Collects per-criterion outcomes from tests marked ``acceptance(n, title)``
and prints one PASS/FAIL line per criterion at the end of the run."""

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            item.user_properties.append(("acceptance", marker.args))
            number, title = marker.args
            _results.setdefault(number, {"title": title, "ok": True, "ran": False})


def pytest_runtest_logreport(report):
    for key, value in report.user_properties:
        if key != "acceptance":
            continue
        entry = _results[value[0]]
        if report.when == "call":
            entry["ran"] = True
        if report.failed or report.skipped:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        verdict = "FAIL" if not entry["ok"] else "PASS" if entry["ran"] else "NOT RUN"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {entry['title']}")
