import numpy as np
import pytest

from erpdis.core import Paradigm
from erpdis.synth import SynthConfig, synth_session


@pytest.fixture(scope="session")
def normal_session():
    return synth_session(SynthConfig(seed=7), "S01", 0, Paradigm.Normal)


@pytest.fixture(scope="session")
def ai_session():
    return synth_session(SynthConfig(seed=7), "S01", 0, Paradigm.AI)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_NETWORK = {"block_filters": (4, 4)}


@pytest.fixture(scope="session")
def tiny_models(normal_session):
    """Fast, barely trained detectors for plumbing tests."""
    from erpdis.detectors import DetectorRole, train_detectors
    from erpdis.engine import TrainConfig

    return train_detectors(
        list(DetectorRole), [normal_session], lambda role: TrainConfig(epochs=1, seed=1), TINY_NETWORK
    )


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
