"""Threshold CKLS diffusions: simulation, drift/volatility estimation from
discrete observations, and bootstrap threshold detection."""

from .model import (
    EstimatorKind,
    ErgodicityClass,
    ModelError,
    RegimeGeometry,
    RegimeParams,
    StateSpace,
    ThresholdModel,
    check_moment_hypotheses,
    classify_ergodicity,
    moment_is_finite,
    regime_of,
    state_space,
)

__version__ = "0.1.0"
