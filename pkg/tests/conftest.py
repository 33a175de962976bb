import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weakhyp.symbols import SystemSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WAVE_A = [["0", "1"], ["t^2", "0"]]
TRIPLE_A = [["0", "1", "0"], ["0", "0", "1"], ["0", "3*t^2", "0"]]


@pytest.fixture
def wave():
    return SystemSpec.from_strings(2, 1, 1.0, 1.0, WAVE_A)


@pytest.fixture
def triple():
    return SystemSpec.from_strings(3, 1, 1.0, 1.0, TRIPLE_A)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_AC_LINES = []


@pytest.fixture
def ac_report():
    """Record ``(criterion, passed, detail)``; printed once in the terminal summary."""
    def record(name, passed, detail):
        _AC_LINES.append(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _AC_LINES:
            terminalreporter.write_line(line)
