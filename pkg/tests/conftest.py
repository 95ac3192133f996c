import math

import pytest

import field_calculus as fc
from utils import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def scheme():
    return fc.OperatorScheme(order=4)


@pytest.fixture
def torus32():
    return fc.TorusGrid.square(2, 32, 2 * math.pi)


@pytest.fixture
def torus64():
    return fc.TorusGrid.square(2, 64, 2 * math.pi)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "results"
