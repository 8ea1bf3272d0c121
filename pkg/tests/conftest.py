import os

import pytest
from hypothesis import HealthCheck, settings

from dpips.sim.topologies import figure1

settings.register_profile(
    "dpips",
    deadline=None,
    max_examples=int(os.environ.get("DPIPS_HYPOTHESIS_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("dpips")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def fig1():
    return figure1()


@pytest.fixture(scope="session")
def aarnet():
    from dpips.sim.experiment import ExperimentConfig, build_network

    return build_network(ExperimentConfig(topology="aarnet"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
