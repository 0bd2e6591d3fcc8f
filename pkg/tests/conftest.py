import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pressure_games.core import PayoffModel, PrincipalModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def logistic_payoff():
    """Two strategies, the second earning 2 more regardless of state or control."""
    return PayoffModel.tabular([0.0, 2.0])


@pytest.fixture
def inert():
    return PrincipalModel.constant([0.0])


def logistic_closed_form(x2, c, t):
    e = np.exp(c * t)
    return x2 * e / (1.0 - x2 + x2 * e)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """record(n, ok, detail): print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
