"""Threshold CKLS model: parameterization, validation and classification.

A threshold CKLS process follows

    dX_t = (a(X_t) - b(X_t) X_t) dt + sigma(X_t) |X_t|^gamma(X_t) dB_t

with piecewise-constant coefficients that switch at thresholds
0 = r_0 < r_1 < ... < r_d.  Regime j lives on the half-open interval
I_j = [r_j, r_{j+1}) (I_0 = (-inf, r_1) when gamma_0 = 0, in which case the
process is a threshold Ornstein-Uhlenbeck living on the whole line).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

__all__ = [
    "ModelError",
    "RegimeParams",
    "RegimeGeometry",
    "ThresholdModel",
    "ErgodicityClass",
    "StateSpace",
    "EstimatorKind",
    "MomentCondition",
    "MomentHypothesisReport",
    "regime_of",
    "classify_ergodicity",
    "state_space",
    "positive_moment_order_bound",
    "negative_moment_order_bound",
    "moment_is_finite",
    "check_moment_hypotheses",
]


class ModelError(ValueError):
    """Raised for invalid parameterizations or out-of-domain arguments."""


class StateSpace(Enum):
    """State space of the process, determined by (gamma_0, a_0, sigma_0)."""

    WHOLE_LINE = "whole-line"
    NONNEG_REFLECTING = "nonneg-reflecting-at-zero"
    POSITIVE = "positive-unattainable-zero"


class EstimatorKind(Enum):
    MLE = "mle"
    QMLE = "qmle"


@dataclass(frozen=True)
class RegimeParams:
    """Coefficients of one regime: drift a - b*x, diffusion sigma*|x|^gamma."""

    a: float
    b: float
    sigma: float
    gamma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "sigma": self.sigma, "gamma": self.gamma}


@dataclass(frozen=True)
class RegimeGeometry:
    """Thresholds plus diffusion exponents; the part of the model that is
    assumed known by the estimators (drift and sigma stay free)."""

    thresholds: tuple[float, ...]
    gammas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(r) for r in self.thresholds))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        _validate_thresholds(self.thresholds)
        if len(self.gammas) != len(self.thresholds) + 1:
            raise ModelError(
                f"need {len(self.thresholds) + 1} gamma values for "
                f"{len(self.thresholds)} thresholds, got {len(self.gammas)}"
            )
        for g in self.gammas:
            if not (0.0 <= g <= 1.0):
                raise ModelError(f"gamma must lie in [0, 1], got {g}")
        _validate_gamma0(self.gammas[0])

    @property
    def n_regimes(self) -> int:
        return len(self.gammas)

    @property
    def d(self) -> int:
        """Number of thresholds."""
        return len(self.thresholds)

    def regime_of(self, x: float) -> int:
        return regime_of(self, x)

    def interval(self, j: int) -> tuple[float, float]:
        """Bounds (lower, upper) of I_j; the extreme regimes are unbounded."""
        lo = -math.inf if (j == 0 and self.gammas[0] == 0.0) else (
            0.0 if j == 0 else self.thresholds[j - 1]
        )
        hi = math.inf if j == self.d else self.thresholds[j]
        return lo, hi


def _validate_thresholds(thresholds: Sequence[float]) -> None:
    for i, r in enumerate(thresholds):
        if not (r > 0) or not math.isfinite(r):
            raise ModelError(f"thresholds must be finite and positive, got {r}")
        if i > 0 and not (r > thresholds[i - 1]):
            raise ModelError(f"thresholds must be strictly increasing, got {list(thresholds)}")


def _validate_gamma0(g0: float) -> None:
    if g0 != 0.0 and not (0.5 <= g0 <= 1.0):
        raise ModelError(f"gamma of the lowest regime must be 0 or in [1/2, 1], got {g0}")


@dataclass(frozen=True)
class ThresholdModel:
    """Full parameterization: d+1 regimes separated by d thresholds."""

    regimes: tuple[RegimeParams, ...]
    thresholds: tuple[float, ...] = ()

    def __post_init__(self):
        regimes = tuple(
            r if isinstance(r, RegimeParams) else RegimeParams(**r) for r in self.regimes
        )
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "thresholds", tuple(float(r) for r in self.thresholds))
        if len(self.regimes) != len(self.thresholds) + 1:
            raise ModelError(
                f"{len(self.thresholds)} thresholds require "
                f"{len(self.thresholds) + 1} regimes, got {len(self.regimes)}"
            )
        _validate_thresholds(self.thresholds)
        r0 = self.regimes[0]
        _validate_gamma0(r0.gamma)
        if 0.5 <= r0.gamma < 1.0 and not (r0.a > 0):
            raise ModelError(f"gamma_0 in [1/2, 1) requires a_0 > 0, got a_0 = {r0.a}")
        if r0.gamma == 1.0 and r0.a < 0:
            raise ModelError(f"gamma_0 = 1 requires a_0 >= 0, got a_0 = {r0.a}")

    @property
    def d(self) -> int:
        return len(self.thresholds)

    @property
    def geometry(self) -> RegimeGeometry:
        return RegimeGeometry(self.thresholds, tuple(r.gamma for r in self.regimes))

    def a(self, j: int) -> float:
        return self.regimes[j].a

    def b(self, j: int) -> float:
        return self.regimes[j].b

    def sigma(self, j: int) -> float:
        return self.regimes[j].sigma

    def gamma(self, j: int) -> float:
        return self.regimes[j].gamma

    def regime_of(self, x: float) -> int:
        return regime_of(self, x)

    # -- JSON wire format ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "thresholds": [float(r) for r in self.thresholds],
            "regimes": [r.to_dict() for r in self.regimes],
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdModel":
        try:
            regimes = tuple(RegimeParams(**r) for r in data["regimes"])
            thresholds = tuple(float(r) for r in data.get("thresholds", ()))
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model description: {exc}") from exc
        return cls(regimes=regimes, thresholds=thresholds)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdModel":
        return cls.from_dict(json.loads(text))


def regime_of(model: "ThresholdModel | RegimeGeometry", x: float) -> int:
    """Index j of the regime interval I_j containing x.

    Intervals are half-open on the right, so a threshold value belongs to the
    regime above it.  For models living on the nonnegative half-line
    (gamma_0 != 0) a negative x is a domain error.
    """
    gammas = model.gammas if isinstance(model, RegimeGeometry) else None
    g0 = gammas[0] if gammas is not None else model.regimes[0].gamma
    if g0 != 0.0 and x < 0:
        raise ModelError(f"x = {x} outside the nonnegative state space")
    return bisect.bisect_right(model.thresholds, x)


@dataclass(frozen=True)
class ErgodicityClass:
    ergodic: bool
    reason: str


def _lower_condition(r0: RegimeParams) -> tuple[bool, str]:
    g, a, b, s = r0.gamma, r0.a, r0.b, r0.sigma
    if g == 0.0:
        if b > 0:
            return True, "gamma0=0: b0>0"
        if b == 0 and a > 0:
            return True, "gamma0=0: b0=0 and a0>0"
        return False, f"gamma0=0 needs b0>0, or b0=0 with a0>0 (a0={a}, b0={b})"
    if g < 1.0:
        if a > 0:
            return True, f"gamma0={g}: a0>0"
        return False, f"gamma0={g} needs a0>0 (a0={a})"
    if a > 0:
        return True, "gamma0=1: a0>0"
    if a == 0 and b < -s * s / 2.0:
        return True, "gamma0=1: a0=0 and b0<-sigma0^2/2"
    return False, f"gamma0=1 needs a0>0, or a0=0 with b0<-sigma0^2/2 (a0={a}, b0={b})"


def _upper_condition(rd: RegimeParams) -> tuple[bool, str]:
    g, a, b, s = rd.gamma, rd.a, rd.b, rd.sigma
    if b > 0:
        return True, f"gammad={g}: bd>0"
    if g <= 0.5:
        if b == 0 and a < 0:
            return True, f"gammad={g}: bd=0 and ad<0"
        return False, f"gammad={g} needs bd>0, or bd=0 with ad<0 (ad={a}, bd={b})"
    if g < 1.0:
        if b == 0:
            return True, f"gammad={g}: bd=0"
        return False, f"gammad={g} needs bd>=0 (bd={b})"
    if -s * s / 2.0 < b <= 0:
        return True, "gammad=1: bd in (-sigmad^2/2, 0]"
    return False, f"gammad=1 needs bd>-sigmad^2/2 (bd={b}, sigmad={s})"


def classify_ergodicity(model: ThresholdModel) -> ErgodicityClass:
    """Positive recurrence test; only the extreme regimes matter.

    The process is ergodic iff the speed density is integrable at both ends
    of the state space, which depends only on (a, b, sigma, gamma) of regime
    0 and regime d.
    """
    ok_lo, why_lo = _lower_condition(model.regimes[0])
    ok_hi, why_hi = _upper_condition(model.regimes[-1])
    return ErgodicityClass(ok_lo and ok_hi, f"lower[{why_lo}]; upper[{why_hi}]")


def state_space(model: ThresholdModel) -> StateSpace:
    """Classify the state space from the behavior of the lowest regime."""
    r0 = model.regimes[0]
    if r0.gamma == 0.0:
        return StateSpace.WHOLE_LINE
    if r0.gamma == 0.5 and 0 < r0.a < r0.sigma**2 / 2.0:
        return StateSpace.NONNEG_REFLECTING
    return StateSpace.POSITIVE


# -- Moments of the stationary law -----------------------------------------
#
# The stationary density is m(x) = 2 / (sigma(x)^2 |x|^{2 gamma(x)} S'(x)) up
# to normalization.  Moment finiteness reduces to the power/exponential
# behavior of m at the boundaries, which is closed-form per regime.


def positive_moment_order_bound(model: ThresholdModel) -> float:
    """Supremum of orders m >= 0 with a finite m-th stationary moment.

    Orders strictly below the bound are finite, orders at or above it are
    not (the boundary order always diverges at least logarithmically).
    Driven by the upper tail, hence by regime d only.
    """
    rd = model.regimes[-1]
    g, a, b, s = rd.gamma, rd.a, rd.b, rd.sigma
    if g == 1.0:
        # S'(x) ~ x^{2b/s^2}: power tail m(x) ~ x^{-2 - 2b/s^2}.
        return 1.0 + 2.0 * b / (s * s)
    if b > 0:
        return math.inf
    if b == 0:
        if g == 0.5:
            return -2.0 * a / (s * s)
        if g > 0.5:
            # S' tends to a constant: m(x) ~ x^{-2 gamma_d}.
            return 2.0 * g - 1.0
        return math.inf  # gamma_d < 1/2 needs a_d < 0: superpolynomial decay
    raise ModelError("moment bounds are defined for ergodic models only")


def negative_moment_order_bound(model: ThresholdModel) -> float:
    """Supremum of orders m > 0 with a finite (-m)-th stationary moment.

    Driven by the lower boundary, hence by regime 0 only.
    """
    r0 = model.regimes[0]
    g, a, b, s = r0.gamma, r0.a, r0.b, r0.sigma
    if g == 0.0:
        return 1.0  # density positive and continuous at 0
    if g == 0.5:
        return 2.0 * a / (s * s)
    if g < 1.0 or a > 0:
        return math.inf  # scale derivative blows up faster than any power
    # gamma_0 = 1, a_0 = 0: power behavior m(x) ~ x^{-2 - 2b/s^2} near 0.
    return -1.0 - 2.0 * b / (s * s)


def moment_is_finite(model: ThresholdModel, m: float) -> bool:
    """Whether the stationary law integrates |x|^m (m may be negative)."""
    if m >= 0:
        return m < positive_moment_order_bound(model)
    return -m < negative_moment_order_bound(model)


@dataclass(frozen=True)
class MomentCondition:
    label: str
    order: float
    finite: bool


@dataclass(frozen=True)
class MomentHypothesisReport:
    kind: EstimatorKind
    passed: bool
    conditions: tuple[MomentCondition, ...]
    witness_pq: tuple[float, float] | None = None


_PQ_GRID = [round(2.0 + 0.1 * k, 10) for k in range(1, 81)]  # q in {2.1, ..., 10.0}


def check_moment_hypotheses(
    model: ThresholdModel, kind: EstimatorKind
) -> MomentHypothesisReport:
    """Moment conditions under which the drift estimators converge.

    QMLE needs a finite (2 + 2*gamma_d)-th moment.  The MLE (with estimated
    volatility) needs a finite (-q)-th and max(2*(1+gamma_d), p)-th moment
    for some p > 1, q > 2 with 1/p + 2/q = 1; we probe p = q = 3 first and
    then scan q on a grid, reporting a witnessing pair when one exists.
    When gamma is identically zero both reduce to a finite second moment.

    Raises
    ------
    ModelError
        If the model is not ergodic (no stationary law to ask about).
    """
    erg = classify_ergodicity(model)
    if not erg.ergodic:
        raise ModelError(f"moment hypotheses need an ergodic model: {erg.reason}")
    gamma_d = model.regimes[-1].gamma
    all_zero = all(r.gamma == 0.0 for r in model.regimes)

    if all_zero:
        fin = moment_is_finite(model, 2.0)
        cond = MomentCondition("second moment (gamma == 0)", 2.0, fin)
        return MomentHypothesisReport(kind, fin, (cond,))

    if kind is EstimatorKind.QMLE:
        order = 2.0 + 2.0 * gamma_d
        fin = moment_is_finite(model, order)
        cond = MomentCondition("moment of order 2 + 2*gamma_d", order, fin)
        return MomentHypothesisReport(kind, fin, (cond,))

    conditions: list[MomentCondition] = []

    def try_pair(p: float, q: float) -> bool:
        pos = max(2.0 * (1.0 + gamma_d), p)
        ok_pos = moment_is_finite(model, pos)
        ok_neg = moment_is_finite(model, -q)
        conditions.append(
            MomentCondition(f"positive moment (p={p:g})", pos, ok_pos)
        )
        conditions.append(MomentCondition(f"negative moment (q={q:g})", -q, ok_neg))
        return ok_pos and ok_neg

    if try_pair(3.0, 3.0):
        return MomentHypothesisReport(kind, True, tuple(conditions), (3.0, 3.0))
    for q in _PQ_GRID:
        p = q / (q - 2.0)
        pos = max(2.0 * (1.0 + gamma_d), p)
        if moment_is_finite(model, pos) and moment_is_finite(model, -q):
            conditions.append(
                MomentCondition(f"positive moment (p={p:g})", pos, True)
            )
            conditions.append(MomentCondition(f"negative moment (q={q:g})", -q, True))
            return MomentHypothesisReport(kind, True, tuple(conditions), (p, q))
    return MomentHypothesisReport(kind, False, tuple(conditions), None)
