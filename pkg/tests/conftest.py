import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def voter():
    return preset_scenario("voter")


@pytest.fixture(scope="session")
def voter_eps():
    return preset_scenario("voter", noise_convention="eps")


@pytest.fixture(scope="session")
def voter_surface(voter_eps):
    return solve_master(voter_eps, 1 / 100)


def unit_config(N, counts):
    """Unit-weight configuration with ``counts[i]`` players in state i."""
    x = np.repeat(np.arange(len(counts)), counts)
    assert len(x) == N
    return x, np.ones(N)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
