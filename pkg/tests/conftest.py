import numpy as np
import pytest

from dataforge import ByteTextCodec, default_layout


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def codec():
    return ByteTextCodec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
