import numpy as np
import pytest

from rosette_gan.config import TrainConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running stochastic or end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """16x16 network narrow enough for sub-second steps."""
    return TrainConfig(resolution=16, z_dim=8, fc1_width=16, base_width=4, num_classes=4, min_count=3,
                       batch_size=8, epochs=2)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
