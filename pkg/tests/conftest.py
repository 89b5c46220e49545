import functools

import pytest

from echosense import frontend as fe
from echosense import gasdb
from echosense.pipeline import run_stream

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def db():
    return gasdb.load()


@functools.lru_cache(maxsize=None)
def closed_loop(name: str, distance: float = 15.0, onset: float = 0.2, duration: float = 1.0):
    """Noiseless simulate -> average -> run_stream for one database gas (cached)."""
    base = gasdb.load()
    sc = fe.Scenario(base.get(name), distance, duration, onset)
    avg = fe.average_receivers(fe.simulate(sc))
    return avg, run_stream(avg, db=base, onset=onset)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
