import numpy as np
import pytest

from uotalign import synthdata


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bench():
    cfg = synthdata.BenchConfig(n_src=12, n_tgt=4, n_probes=10)
    return (cfg,) + synthdata.generate(cfg)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def report():
    def _report(criterion, ok, detail):
        ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
