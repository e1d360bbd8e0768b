import numpy as np
import pytest

from mwlab import Network


@pytest.fixture(scope="session")
def E1():
    """Two parallel queues, no routing, one served per slot."""
    return Network.build(np.zeros((2, 2)), [[1, 0], [0, 1]])


@pytest.fixture(scope="session")
def E2():
    """Tandem pair: work completed at queue 1 joins queue 2."""
    return Network.build([[0, 0], [1, 0]], [[1, 0], [0, 1]])


@pytest.fixture(scope="session")
def E1w():
    """E1 with weights (4, 1)."""
    return Network.build(np.zeros((2, 2)), [[1, 0], [0, 1]], weights=[4, 1])


@pytest.fixture(scope="session")
def E2w():
    return Network.build([[0, 0], [1, 0]], [[1, 0], [0, 1]], weights=[4, 1])
