import numpy as np
import pytest

from tunet.autograd import set_precision


@pytest.fixture
def double_precision():
    """Run a test with float64 tensors, restoring the default afterwards."""
    set_precision("double")
    yield
    set_precision("single")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
