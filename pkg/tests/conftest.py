import numpy as np
import pytest

from aaee.grid_fields import make_grid

TWO_PI = 2 * np.pi


@pytest.fixture
def grid32():
    return make_grid(32, 32, TWO_PI, TWO_PI)


@pytest.fixture
def grid64():
    return make_grid(64, 64, TWO_PI, TWO_PI)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
