import numpy as np
import pytest

from polypnet.coupled_net import CoupledNetConfig
from polypnet.dataset import SamplePair
from polypnet.tensor import precision


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running checks (full-network gradients, end-to-end training)")


@pytest.fixture
def double():
    with precision("double"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    return CoupledNetConfig.toy(width=4, input_side=32)


def _sample(rng, side=32, sample_id="s0", source="toy"):
    image = rng.random((side, side, 3))
    mask = np.zeros((side, side), dtype=np.uint8)
    mask[side // 4: side // 2, side // 3: 3 * side // 4] = 1
    return SamplePair(image=image, mask=mask, source=source, sample_id=sample_id)


@pytest.fixture
def make_sample():
    """Factory for a random image with a rectangular mask"""
    return _sample
