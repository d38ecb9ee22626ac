import numpy as np
import pytest
from hypothesis import HealthCheck, settings


settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = {}


def record(key, name, passed, detail=""):
    ACCEPTANCE[key] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key} {'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

