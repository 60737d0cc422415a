import numpy as np
import pytest

from tapkinn.network import get_preset
from tapkinn.reactor import PulseSpec, ReactorConfig, simulate_pulse_train

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def co_net():
    return get_preset("co-oxidation")


@pytest.fixture(scope="session")
def reactor():
    return ReactorConfig()


@pytest.fixture(scope="session")
def pulse_train(co_net, reactor):
    """Default ten-pulse CO/O2 train on a clean surface."""
    net, k = co_net
    return simulate_pulse_train(reactor, net, k, PulseSpec((1.0, 1.0, 0.0)), 10)


@pytest.fixture(scope="session")
def single_record(pulse_train):
    return pulse_train[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
