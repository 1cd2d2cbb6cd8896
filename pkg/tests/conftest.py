import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("cis", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cis")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}
ACCEPTANCE_COUNT = 9


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, ACCEPTANCE_COUNT + 1):
        ok, detail = ACCEPTANCE.get(k, (False, "no result recorded"))
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
