import numpy as np
import pytest

from sobdub import DiscreteSpace, WeightFamily, build_grid
from sobdub.subelliptic import grushin_space, node_at


@pytest.fixture(scope="session")
def leb1d():
    """Lebesgue on [-2, 2] with spacing 1e-3."""
    return build_grid([(-2.0, 2.0)], 4001, WeightFamily("lebesgue"))


@pytest.fixture(scope="session")
def leb2d():
    return build_grid([(-2.0, 2.0), (-2.0, 2.0)], 161, WeightFamily("lebesgue", dim=2))


@pytest.fixture(scope="session")
def atom():
    return DiscreteSpace([1.0], [[0.0]], mesh=0.1)


@pytest.fixture(scope="session")
def grushin():
    space, Q = grushin_space()
    return space, Q, node_at(space, (0.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
