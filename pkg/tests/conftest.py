import numpy as np
import pytest

from freqcert.cloud_io import generate_shape, synthetic_dataset
from freqcert.pipeline import PipelineConfig

SMALL = PipelineConfig(k=6, K=8, m=4, n=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere32():
    return generate_shape("sphere", 32, noise_std=0.02, seed=3, label=0)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small two-split suite used by the classifier and harness tests."""
    kw = dict(n_points=64, noise_std=0.02, seed=5)
    return synthetic_dataset("train", 24, **kw), synthetic_dataset("test", 8, **kw)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
