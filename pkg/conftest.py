"""
Shared pytest fixtures for the EM Boundary Net tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to the Python path so the tests run from a checkout
sys.path.insert(0, str(Path(__file__).parent / "src"))

from em_boundary_net.config.settings import reload_settings
from em_boundary_net.core.spec_parser import parse_spec
from em_boundary_net.core.training import make_stack_pair


TINY_NET = """
image  input
conv1  conv 3x3x1 3      <- image
relu1  activation relu   <- conv1
pool1  max_filter 2x2x1  <- relu1
conv2  conv 3x3x1 2      <- pool1
prob   output            <- conv2
"""


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test starts from default settings with deterministic single-threaded kernels."""
    monkeypatch.delenv("EMB_THREADS", raising=False)
    reload_settings(threads=1)
    yield
    reload_settings()


@pytest.fixture
def tiny_spec():
    """Conv, ReLU, 2x2 max-filter, conv; field of view 8 x 8 x 1."""
    return parse_spec(TINY_NET)


@pytest.fixture
def striped_pair():
    """A 24 x 24 x 2 stack of vertical stripe cells with a matching image."""
    truth = np.zeros((24, 24, 2), dtype=np.uint32)
    for k in range(4):
        truth[6 * k:6 * k + 6] = k + 1
    image = np.where(truth % 2 == 0, 0.8, 0.3).astype(np.float32)
    return make_stack_pair(image, truth, name="stripes")
