"""Discrete path functionals consumed by the estimators.

For observations 0 = t_0 < ... < t_N and a regime geometry, the raw sums are

    Q^{j,m} = sum_i X_{t_i}^m 1_{I_j}(X_{t_i}) (t_{i+1} - t_i)
    M^{j,m} = sum_i X_{t_i}^m 1_{I_j}(X_{t_i}) (X_{t_{i+1}} - X_{t_i})

over i = 0..N-1.  The modified increments rewrite M^{j,m} for the negative
exponents the likelihood needs, trading the power increments for boundary
terms plus a time integral (an Ito-Tanaka identity), which discretizes much
better.  The bracket statistic of a regime is the realized quadratic
variation of the path clipped to that regime's interval, expressed through
M^{j,0}, M^{j,1} and boundary terms only.

All sums accumulate with math.fsum (exact compensated summation), so two
independent implementations of the same sum agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import fsum
from typing import Iterable, Mapping

import numpy as np

from .model import RegimeGeometry

__all__ = [
    "StatisticsError",
    "ObservationSet",
    "PathStatistics",
    "ModifiedIncrements",
    "BracketStatistics",
    "compute_QM",
    "compute_modified_M",
    "compute_brackets",
    "mle_q_exponents",
    "full_q_exponents",
]


class StatisticsError(ValueError):
    """Raised on invalid observation sets or missing statistics."""


def _key(m: float) -> float:
    return round(float(m), 12)


@dataclass(frozen=True)
class ObservationSet:
    """Discrete observations (t_i, x_i), strictly increasing times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape:
            raise StatisticsError("times and values must be 1-d arrays of equal length")
        if times.size < 2:
            raise StatisticsError("need at least two observations")
        if not np.all(np.diff(times) > 0):
            raise StatisticsError("times must be strictly increasing")

    @property
    def n_increments(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        """T_N: elapsed time between first and last observation."""
        return float(self.times[-1] - self.times[0])

    @property
    def max_gap(self) -> float:
        """Delta_N: largest gap between consecutive observations."""
        return float(np.max(np.diff(self.times)))


@dataclass(frozen=True)
class PathStatistics:
    """Q and M sums per regime and exponent, plus grid metadata."""

    geometry: RegimeGeometry
    Q: dict
    M: dict
    horizon: float
    n_increments: int
    max_gap: float
    x_first: float
    x_last: float

    def q(self, j: int, m: float) -> float:
        try:
            return self.Q[j][_key(m)]
        except KeyError:
            raise StatisticsError(f"Q[{j}][{m}] was not computed") from None

    def m(self, j: int, m: float) -> float:
        try:
            return self.M[j][_key(m)]
        except KeyError:
            raise StatisticsError(f"M[{j}][{m}] was not computed") from None

    def has_q(self, j: int, m: float) -> bool:
        return _key(m) in self.Q.get(j, {})

    def to_flat_dict(self) -> dict:
        """Flat {"Q.j.m": value} mapping for JSON export."""
        out = {}
        for j, per in sorted(self.Q.items()):
            for m, v in sorted(per.items()):
                out[f"Q.{j}.{m:g}"] = v
        for j, per in sorted(self.M.items()):
            for m, v in sorted(per.items()):
                out[f"M.{j}.{m:g}"] = v
        return out


def _normalize_exponents(
    geometry: RegimeGeometry, exponents: Mapping[int, Iterable[float]] | Iterable[float]
) -> dict[int, list[float]]:
    if isinstance(exponents, Mapping):
        return {j: sorted({_key(m) for m in ms}) for j, ms in exponents.items()}
    shared = sorted({_key(m) for m in exponents})
    return {j: list(shared) for j in range(geometry.n_regimes)}


def compute_QM(
    obs: ObservationSet,
    geometry: RegimeGeometry,
    q_exponents: Mapping[int, Iterable[float]] | Iterable[float],
    m_exponents: Mapping[int, Iterable[float]] | Iterable[float] = (0.0, 1.0),
) -> PathStatistics:
    """Exact finite sums Q^{j,m} and M^{j,m} on the observation grid.

    Exponent requests may be shared across regimes or given per regime.
    Unvisited regimes yield zeros.  A negative exponent where the regime
    contains a zero value, or a fractional exponent on negative values,
    is an error.
    """
    q_req = _normalize_exponents(geometry, q_exponents)
    m_req = _normalize_exponents(geometry, m_exponents)

    x = obs.values
    if geometry.gammas[0] != 0.0 and np.any(x < 0):
        raise StatisticsError("negative observations outside the nonnegative state space")
    xs = x[:-1]
    dt = np.diff(obs.times)
    dx = np.diff(x)
    thr = np.asarray(geometry.thresholds)
    regime = np.searchsorted(thr, xs, side="right")

    def powers(vals: np.ndarray, m: float, j: int) -> np.ndarray:
        if m == 0.0:
            return np.ones_like(vals)
        if m < 0 and np.any(vals == 0.0):
            raise StatisticsError(
                f"negative exponent {m} requested for regime {j} containing value 0"
            )
        if m != int(m) and np.any(vals < 0.0):
            raise StatisticsError(
                f"fractional exponent {m} requested for regime {j} with negative values"
            )
        return vals**m

    Q: dict[int, dict[float, float]] = {}
    M: dict[int, dict[float, float]] = {}
    for j in range(geometry.n_regimes):
        mask = regime == j
        vj, dtj, dxj = xs[mask], dt[mask], dx[mask]
        Q[j] = {}
        for m in q_req.get(j, ()):
            Q[j][m] = fsum(powers(vj, m, j) * dtj) if vj.size else 0.0
        M[j] = {}
        for m in m_req.get(j, ()):
            M[j][m] = fsum(powers(vj, m, j) * dxj) if vj.size else 0.0

    return PathStatistics(
        geometry=geometry,
        Q=Q,
        M=M,
        horizon=obs.horizon,
        n_increments=obs.n_increments,
        max_gap=obs.max_gap,
        x_first=float(x[0]),
        x_last=float(x[-1]),
    )


def mle_q_exponents(gamma: float) -> list[float]:
    """Q exponents a regime with this gamma needs for the drift likelihood
    (including the time integrals inside the modified increments)."""
    out = {-2.0 * gamma, 1.0 - 2.0 * gamma, 2.0 - 2.0 * gamma}
    for m in (-2.0 * gamma, 1.0 - 2.0 * gamma):
        if m != 0.0:
            out.add(m + 2.0 * gamma - 1.0)
    return sorted(_key(m) for m in out)


def full_q_exponents(gamma: float) -> list[float]:
    """Everything the full pipeline touches: quasi-likelihood, likelihood,
    volatility ratio and both covariance blocks."""
    out = set(mle_q_exponents(gamma))
    out.update({0.0, 1.0, 2.0})
    out.add(_key(2.0 * gamma))
    out.update({_key(1.0 + 2.0 * gamma), _key(2.0 + 2.0 * gamma)})
    return sorted(out)


def _power_antideriv(m: float, y: float) -> float:
    """Antiderivative of y^m (logarithm at m = -1)."""
    if m == -1.0:
        return math.log(y)
    return y ** (m + 1.0) / (m + 1.0)


@dataclass(frozen=True)
class ModifiedIncrements:
    """Ito-Tanaka discretizations Mcal^{j,m} (Mcal[j][0] is plain M[j][0])."""

    values: dict
    sigma: tuple

    def get(self, j: int, m: float) -> float:
        try:
            return self.values[j][_key(m)]
        except KeyError:
            raise StatisticsError(f"Mcal[{j}][{m}] was not computed") from None


def compute_modified_M(stats: PathStatistics, sigma: Iterable[float]) -> ModifiedIncrements:
    """Modified increments for m in {-2 gamma_j, 1 - 2 gamma_j} \\ {0}.

    `sigma` supplies the per-regime volatility (estimate or known truth)
    entering the time-integral correction.
    """
    geo = stats.geometry
    sigma = tuple(float(s) for s in sigma)
    if len(sigma) != geo.n_regimes:
        raise StatisticsError(f"need {geo.n_regimes} sigma values, got {len(sigma)}")
    d = geo.d
    thr = geo.thresholds
    x0, xT = stats.x_first, stats.x_last

    def sum_M0_above(j: int) -> float:
        return fsum(stats.m(k, 0.0) for k in range(j, d + 1))

    values: dict[int, dict[float, float]] = {}
    for j in range(geo.n_regimes):
        gam = geo.gammas[j]
        per = {0.0: stats.m(j, 0.0)}
        for m in (-2.0 * gam, 1.0 - 2.0 * gam):
            m = _key(m)
            if m == 0.0:
                continue
            q_corr = stats.q(j, m + 2.0 * gam - 1.0)
            corr = -0.5 * m * sigma[j] ** 2 * q_corr
            if d == 0:
                # single regime: no boundary terms, plain Ito identity
                per[m] = (
                    _power_antideriv(m, xT) - _power_antideriv(m, x0) + corr
                )
                continue
            if j == 0:
                r1 = thr[0]
                f = lambda x: (
                    _power_antideriv(m, r1) - _power_antideriv(m, x) if x < r1 else 0.0
                )
                frak0 = min(xT, r1) - min(x0, r1)
                per[m] = f(x0) - f(xT) + corr + r1**m * (stats.m(0, 0.0) - frak0)
            elif j == d:
                rd = thr[-1]
                f = lambda x: (
                    _power_antideriv(m, x) - _power_antideriv(m, rd) if x >= rd else 0.0
                )
                frakd = max(xT, rd) - max(x0, rd)
                per[m] = f(xT) - f(x0) + corr + rd**m * (stats.m(d, 0.0) - frakd)
            else:
                rj, rj1 = thr[j - 1], thr[j]
                f = lambda x: (
                    _power_antideriv(m, min(x, rj1)) - _power_antideriv(m, rj)
                    if x > rj
                    else 0.0
                )
                frak_j = max(xT, rj) - max(x0, rj)
                frak_j1 = max(xT, rj1) - max(x0, rj1)
                per[m] = (
                    f(xT)
                    - f(x0)
                    + corr
                    + rj**m * stats.m(j, 0.0)
                    + rj1**m * frak_j1
                    - rj**m * frak_j
                    - (rj1**m - rj**m) * sum_M0_above(j + 1)
                )
        values[j] = per
    return ModifiedIncrements(values=values, sigma=sigma)


@dataclass(frozen=True)
class BracketStatistics:
    """Realized brackets Qbold[j] of the regime-clipped path."""

    values: tuple

    def get(self, j: int) -> float:
        return self.values[j]


def compute_brackets(stats: PathStatistics) -> BracketStatistics:
    """Discretized quadratic variation of f_j(X) per regime.

    Needs M[j][0] and M[j][1] for every regime.
    """
    geo = stats.geometry
    d = geo.d
    thr = geo.thresholds
    x0, xT = stats.x_first, stats.x_last
    out = []
    for j in range(geo.n_regimes):
        if d == 0:
            val = xT**2 - x0**2 - 2.0 * stats.m(0, 1.0)
        elif j == 0:
            r1 = thr[0]
            f0 = lambda x: min(x, r1)
            frak0 = min(xT, r1) - min(x0, r1)
            val = (
                f0(xT) ** 2
                - f0(x0) ** 2
                + 2.0 * (r1 * stats.m(0, 0.0) - stats.m(0, 1.0))
                - 2.0 * r1 * frak0
            )
        elif j == d:
            rd = thr[-1]
            fd = lambda x: max(x - rd, 0.0)
            val = (
                fd(xT) ** 2
                - fd(x0) ** 2
                + 2.0 * (rd * stats.m(d, 0.0) - stats.m(d, 1.0))
            )
        else:
            rj, rj1 = thr[j - 1], thr[j]
            fj = lambda x: min(max(x - rj, 0.0), rj1 - rj)
            frak_j1 = max(xT, rj1) - max(x0, rj1)
            tail = fsum(stats.m(k, 0.0) for k in range(j + 1, d + 1))
            val = (
                fj(xT) ** 2
                - fj(x0) ** 2
                - 2.0 * stats.m(j, 1.0)
                + 2.0 * rj * stats.m(j, 0.0)
                + 2.0 * (rj1 - rj) * (frak_j1 - tail)
            )
        out.append(val)
    return BracketStatistics(values=tuple(out))
