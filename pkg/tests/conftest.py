import re
import time

_START = time.perf_counter()
_SUITE_LIMIT = 600.0
_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.failed or report.skipped:
        ok = report.passed and not report.skipped
        _CRITERIA[n] = _CRITERIA.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    elapsed = time.perf_counter() - _START
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        tr.write_line(f"criterion {n:2d}: {'PASS' if _CRITERIA[n] else 'FAIL'}")
    verdict = "PASS" if elapsed <= _SUITE_LIMIT else "FAIL"
    tr.write_line(f"criterion 11 (suite runtime {elapsed:.1f} s, limit {_SUITE_LIMIT:.0f} s): {verdict}")
