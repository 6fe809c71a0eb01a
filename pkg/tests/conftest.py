import numpy as np
import pytest
from hypothesis import settings

from neurokinect.model import ModelConfig
from neurokinect.pipeline import prepare_splits
from neurokinect.synth import SynthConfig, gen_session

settings.register_profile("nk", deadline=None, max_examples=60)
settings.load_profile("nk")

# Smallest config exercising every layer kind; used for gradient checks.
TINY = ModelConfig(n_channels=2, window_steps=3, conv_branches=((4, "relu"),), lstm_hidden=4,
                   dense_widths=(4,), dropout_rate=0.2, seed=3)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def small_session():
    return gen_session(SynthConfig(n_channels=8, n_trials=12, informative_channels=3, seed=5))


@pytest.fixture(scope="session")
def default_session():
    return gen_session(SynthConfig())


@pytest.fixture(scope="session")
def default_splits(default_session):
    return prepare_splits(default_session)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
