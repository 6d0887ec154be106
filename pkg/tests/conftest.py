import pytest
import torch

from styleforge.codec import Encoder, standin_weights

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def archive():
    return standin_weights(0)


@pytest.fixture(scope="session")
def encoder(archive):
    return Encoder(archive)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
