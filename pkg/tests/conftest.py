import numpy as np
import pytest

from lendrate.intensity import LinearIntensity, PiecewiseIntensity

# calibrated market curve and the linear toy curve used throughout the tests
MARKET_RATES = [0.0, 0.0545, 0.0555, 0.0567, 0.058, 0.25]
MARKET_PLUS = [0.0067, 0.0067, 0.0067, 0.0041, 0.0015, 0.0]
MARKET_MINUS = [0.0, 0.0008, 0.0029, 0.009, 0.0222, 1.9485]


@pytest.fixture
def market_curve():
    return PiecewiseIntensity(MARKET_RATES, MARKET_PLUS, MARKET_MINUS)


@pytest.fixture
def toy_curve():
    return LinearIntensity(0.05, -0.2, 0.0, 0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
