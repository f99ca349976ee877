import re
import sys

_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_", report.nodeid)
    if m and (report.when == "call" or report.outcome != "passed"):
        _outcomes[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.CRITERIA):
        name = mod.CRITERIA[n]
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        elif n in _outcomes:
            terminalreporter.write_line(f"criterion {n}: FAIL  {name}: raised before a verdict")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  {name}")
