import numpy as np
import pytest

from unimixer import backends


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # jit compilation (or cache load) happens here, outside any timed test
    backends.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
