import pytest

from mixwdcusum.distributions import standard_pair
from mixwdcusum.model import NetworkConfig, PhaseSchedule

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def pair():
    return standard_pair()


@pytest.fixture(scope="session")
def base_config():
    return NetworkConfig(3, 1, 3)


@pytest.fixture(scope="session")
def base_schedule():
    return PhaseSchedule(1, (9, 10))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
