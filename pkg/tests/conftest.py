import pytest

from sbpnet import pilots

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def net_2s5c():
    return pilots.reentrant_2s5c()


@pytest.fixture(scope="session")
def fam_2s5c():
    return pilots.reentrant_2s5c_family()


@pytest.fixture(scope="session")
def prio_net():
    return pilots.priority_station()


@pytest.fixture(scope="session")
def mm1():
    return pilots.single_class(0.5, 1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[1:].split()[0])):
            terminalreporter.write_line(line)
