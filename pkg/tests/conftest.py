from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from avresilience.telemetry import synthetic_blinding_dataset

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# lines recorded by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def small_dataset():
    return synthetic_blinding_dataset(2000, seed=11, n_windows=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
