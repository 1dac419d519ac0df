import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qpmh.experiments import simulate_dataset
from qpmh.models import LGSS, LGSS_TRUTH

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def lgss():
    return LGSS()


@pytest.fixture(scope="session")
def lgss_data(lgss):
    """The synthetic LGSS setting: T = 250 at the simulation truth."""
    x, y = simulate_dataset(lgss, LGSS_TRUTH, 250, seed=0)
    return x, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def _report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        results[number] = line
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
