"""Shared pytest wiring: the acceptance suite records one verdict per
criterion and the lines are printed together at the end of the run."""

import pytest

N_CRITERIA = 9
_verdicts = {}


class Verdict:
    def __call__(self, number, title, ok, detail):
        _verdicts[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"


@pytest.fixture
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    ran_acceptance = any("test_acceptance" in str(r.nodeid)
                         for reports in terminalreporter.stats.values()
                         for r in reports if hasattr(r, "nodeid"))
    if not ran_acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _verdicts:
            title, ok, detail = _verdicts[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n} ({title}): {detail}")
        else:
            terminalreporter.write_line(f"FAIL criterion {n}: not run")
