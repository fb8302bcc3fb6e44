import numpy as np
import pytest

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE = {}
N_CRITERIA = 9


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    def _report(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    ran = {r.nodeid for key in ("passed", "failed", "error")
           for r in terminalreporter.stats.get(key, []) if "test_acceptance" in r.nodeid}
    if not ran and not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            passed, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: not run or errored")
