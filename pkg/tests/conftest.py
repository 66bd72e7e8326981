import numpy as np
import pytest

from tckls.model import RegimeParams, ThresholdModel


def make_table1_model() -> ThresholdModel:
    """Three-regime benchmark: CIR below 1, driftless BM on [1, 1.5), CIR above."""
    return ThresholdModel(
        regimes=(
            RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
            RegimeParams(a=0.0, b=0.0, sigma=0.4, gamma=0.0),
            RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
        ),
        thresholds=(1.0, 1.5),
    )


def make_cir_model(a=0.3, b=0.2, sigma=0.2) -> ThresholdModel:
    return ThresholdModel(regimes=(RegimeParams(a=a, b=b, sigma=sigma, gamma=0.5),))


def make_ou_model(a=0.3, b=0.2, sigma=0.2) -> ThresholdModel:
    return ThresholdModel(regimes=(RegimeParams(a=a, b=b, sigma=sigma, gamma=0.0),))


@pytest.fixture
def table1_model():
    return make_table1_model()


@pytest.fixture
def cir_model():
    return make_cir_model()


@pytest.fixture
def ou_model():
    return make_ou_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
