"""Stationary law of an ergodic threshold CKLS process.

The process is a regular one-dimensional diffusion, so its invariant law is
the normalized speed density

    m(x) = 2 / (sigma(x)^2 |x|^{2 gamma(x)} S'(x)),
    S'(x) = exp(-int_{ref}^x 2 (a(y) - b(y) y) / (sigma(y)^2 y^{2 gamma(y)}) dy),

with the reference point fixed at the first threshold (S is only defined up
to an affine map).  The drift integral has a closed-form antiderivative on
each regime, including the logarithmic special cases, so S' is evaluated
without nested quadrature.  Normalization and moments use adaptive
quadrature segment by segment with explicit treatment of the unbounded
tails and of the integrable blow-up at a reflecting origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import (
    ModelError,
    StateSpace,
    ThresholdModel,
    classify_ergodicity,
    negative_moment_order_bound,
    positive_moment_order_bound,
    state_space,
)

__all__ = [
    "StationaryError",
    "StationaryDistribution",
    "scale_derivative",
    "speed_density",
    "build_stationary",
    "stationary_moment",
    "sample_stationary",
    "export_density_csv",
]

_QUAD_OPTS = {"epsabs": 1e-13, "epsrel": 1e-12, "limit": 400}


class StationaryError(RuntimeError):
    """Raised when the stationary law does not exist or cannot be computed."""


def _antideriv(p: float, y):
    """Antiderivative of y**p (log branch at p = -1)."""
    if p == -1.0:
        return np.log(y)
    return y ** (p + 1.0) / (p + 1.0)


def _drift_antideriv(reg, y):
    """Antiderivative of 2(a - b y)/(sigma^2 y^{2 gamma}) within one regime."""
    two_over_s2 = 2.0 / (reg.sigma * reg.sigma)
    return two_over_s2 * (
        reg.a * _antideriv(-2.0 * reg.gamma, y) - reg.b * _antideriv(1.0 - 2.0 * reg.gamma, y)
    )


def _default_ref(model: ThresholdModel) -> float:
    return model.thresholds[0] if model.d >= 1 else 1.0


def _log_scale_integral(model: ThresholdModel, x, ref: float):
    """I(x) = int_ref^x of the drift integrand, piecewise closed form.

    Accepts scalars or arrays; x must lie in the interior of the state space.
    """
    x = np.asarray(x, dtype=float)
    thr = np.asarray(model.thresholds, dtype=float)
    # cumulative integral from ref up to each threshold
    cum_at_thr = np.zeros(len(thr))
    if len(thr):
        # integral from ref to thr[i] walking through regimes
        for i in range(len(thr)):
            lo, hi = (ref, thr[i]) if thr[i] >= ref else (thr[i], ref)
            sign = 1.0 if thr[i] >= ref else -1.0
            acc = 0.0
            cuts = [lo] + [t for t in thr if lo < t < hi] + [hi]
            for a_pt, b_pt in zip(cuts[:-1], cuts[1:]):
                mid = 0.5 * (a_pt + b_pt)
                reg = model.regimes[int(np.searchsorted(thr, mid, side="right"))]
                acc += _drift_antideriv(reg, b_pt) - _drift_antideriv(reg, a_pt)
            cum_at_thr[i] = sign * acc
    j = np.searchsorted(thr, x, side="right")
    out = np.empty_like(x)
    for jj in np.unique(j):
        reg = model.regimes[int(jj)]
        sel = j == jj
        anchor = ref if (len(thr) == 0) else (thr[jj - 1] if jj >= 1 else thr[0])
        base = 0.0
        if len(thr):
            base = cum_at_thr[jj - 1] if jj >= 1 else cum_at_thr[0]
        out[sel] = base + _drift_antideriv(reg, x[sel]) - _drift_antideriv(reg, anchor)
    return out


def _check_interior(model: ThresholdModel, x) -> None:
    kind = state_space(model)
    arr = np.asarray(x, dtype=float)
    if kind is StateSpace.WHOLE_LINE:
        return
    if np.any(arr <= 0):
        raise ModelError("x must be strictly positive inside this state space")


def scale_derivative(model: ThresholdModel, x, ref: float | None = None):
    """Derivative S'(x) of the scale function, normalized so S'(ref) = 1.

    ref defaults to the first threshold (1.0 for a threshold-free model).
    """
    _check_interior(model, x)
    ref = _default_ref(model) if ref is None else float(ref)
    out = np.exp(-_log_scale_integral(model, x, ref))
    return float(out) if np.isscalar(x) else out


def speed_density(model: ThresholdModel, x, ref: float | None = None):
    """Unnormalized stationary density m(x) (the speed density)."""
    _check_interior(model, x)
    ref = _default_ref(model) if ref is None else float(ref)
    arr = np.asarray(x, dtype=float)
    thr = np.asarray(model.thresholds, dtype=float)
    j = np.searchsorted(thr, arr, side="right")
    sig = np.array([r.sigma for r in model.regimes])[j]
    gam = np.array([r.gamma for r in model.regimes])[j]
    dens = (
        2.0
        / (sig * sig * np.abs(arr) ** (2.0 * gam))
        * np.exp(_log_scale_integral(model, arr, ref))
    )
    return float(dens) if np.isscalar(x) else dens


@dataclass(frozen=True)
class StationaryDistribution:
    """Tabulated stationary law: grid, density, cdf, and the normalization
    constant Z = int m(y) dy of the raw speed density."""

    model: ThresholdModel
    support: tuple[float, float]  # hard bounds of the state space
    grid: np.ndarray  # effective (truncated) support, strictly increasing
    density: np.ndarray  # normalized density on grid
    cdf: np.ndarray  # normalized cdf on grid
    normalization: float
    ref: float

    @property
    def mean(self) -> float:
        return stationary_moment(self, 1.0)

    def unnormalized_density(self, x):
        return speed_density(self.model, x, self.ref)


def _segment_bounds(model: ThresholdModel) -> list[tuple[float, float]]:
    kind = state_space(model)
    lo0 = -math.inf if kind is StateSpace.WHOLE_LINE else 0.0
    pts = [lo0, *model.thresholds, math.inf]
    return list(zip(pts[:-1], pts[1:]))


def _quad_segment(f, lo: float, hi: float) -> float:
    val, _ = quad(f, lo, hi, **_QUAD_OPTS)
    return val


def build_stationary(
    model: ThresholdModel, tol: float = 1e-10, n_grid_per_segment: int = 400
) -> StationaryDistribution:
    """Normalize the speed density and tabulate density and cdf.

    The unbounded tails (and, for a reflecting origin, the integrable
    singularity at 0) are truncated where the remaining mass drops below
    max(tol, 1e-12) relative to the total; the cdf endpoints are then 0 and 1
    within 1e-8 by construction.

    Raises
    ------
    StationaryError
        If the model is not ergodic or quadrature fails to converge.
    """
    erg = classify_ergodicity(model)
    if not erg.ergodic:
        raise StationaryError(f"no stationary law: {erg.reason}")
    ref = _default_ref(model)
    kind = state_space(model)
    dens = lambda x: speed_density(model, x, ref)

    segments = _segment_bounds(model)
    try:
        z_total = sum(_quad_segment(dens, lo, hi) for lo, hi in segments)
    except Exception as exc:  # pragma: no cover - quad failures are rare
        raise StationaryError(f"quadrature failed on the speed density: {exc}") from exc
    if not (math.isfinite(z_total) and z_total > 0):
        raise StationaryError(f"speed density not integrable (Z = {z_total})")

    tail_tol = max(min(tol, 1e-9), 1e-13) * z_total

    # characteristic scale for bracketing the bulk
    levels = [abs(r.a / r.b) for r in model.regimes if r.b > 0]
    scale = max([1.0, *model.thresholds, *levels])

    # truncate the upper tail
    hi = scale
    while _quad_segment(dens, hi, math.inf) > tail_tol:
        hi *= 2.0
        if hi > 1e12:
            raise StationaryError("upper tail does not decay; check ergodicity")
    # truncate the lower tail / inner boundary
    if kind is StateSpace.WHOLE_LINE:
        lo = -scale
        while _quad_segment(dens, -math.inf, lo) > tail_tol:
            lo *= 2.0
            if lo < -1e12:
                raise StationaryError("lower tail does not decay; check ergodicity")
    else:
        lo = min(scale, *(model.thresholds or (scale,))) * 0.5
        while _quad_segment(dens, 0.0, lo) > tail_tol:
            lo *= 0.125
            if lo < 1e-300:
                raise StationaryError("mass piles up at 0; check ergodicity")

    # knots: per regime segment clipped to [lo, hi], log-spaced next to a
    # one-sided boundary at 0, linear elsewhere
    knots = [np.array([lo, hi])]
    for seg_lo, seg_hi in segments:
        a_pt, b_pt = max(seg_lo, lo), min(seg_hi, hi)
        if not (b_pt > a_pt):
            continue
        knots.append(np.linspace(a_pt, b_pt, n_grid_per_segment))
        if kind is not StateSpace.WHOLE_LINE and seg_lo == 0.0 and a_pt > 0:
            knots.append(np.geomspace(a_pt, b_pt, n_grid_per_segment))
    grid = np.unique(np.concatenate(knots))

    grid, cell_mass = _refine_cells(dens, grid, z_total)
    lower_tail = (
        _quad_segment(dens, -math.inf, grid[0])
        if kind is StateSpace.WHOLE_LINE
        else _quad_segment(dens, 0.0, grid[0])
    )
    cdf = np.concatenate(([lower_tail], lower_tail + np.cumsum(cell_mass))) / z_total
    cdf = np.minimum.accumulate(np.minimum(cdf, 1.0)[::-1])[::-1]
    cdf = np.maximum.accumulate(cdf)

    return StationaryDistribution(
        model=model,
        support=(
            -math.inf if kind is StateSpace.WHOLE_LINE else 0.0,
            math.inf,
        ),
        grid=grid,
        density=dens(grid) / z_total,
        cdf=cdf,
        normalization=z_total,
        ref=ref,
    )


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _cell_masses(dens, grid: np.ndarray) -> np.ndarray:
    half = 0.5 * np.diff(grid)
    mid = grid[:-1] + half
    xs = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = dens(xs.ravel()).reshape(xs.shape)
    return half * (vals @ _GL_WEIGHTS)


def _refine_cells(dens, grid: np.ndarray, z_total: float, max_frac: float = 1e-3):
    """Split cells until no cell carries more than max_frac of the mass."""
    for _ in range(4):
        mass = _cell_masses(dens, grid)
        heavy = np.flatnonzero(mass > max_frac * z_total)
        if heavy.size == 0:
            break
        extra = []
        for i in heavy:
            extra.append(np.linspace(grid[i], grid[i + 1], 9)[1:-1])
        grid = np.unique(np.concatenate([grid, *extra]))
    return grid, _cell_masses(dens, grid)


def _moment_gate(model: ThresholdModel, m: float, regime: int | None) -> bool:
    """True when int_{I_j} x^m dmu is finite."""
    d = model.d
    touches_inf = regime is None or regime == d
    touches_zero = regime is None or regime == 0
    if m > 0 and touches_inf and not (m < positive_moment_order_bound(model)):
        return False
    if m < 0 and touches_zero and not (-m < negative_moment_order_bound(model)):
        return False
    return True


def stationary_moment(
    dist: StationaryDistribution, m: float, regime: int | None = None
) -> float:
    """Moment int x^m dmu, optionally restricted to one regime interval.

    Returns math.inf without integrating when the closed-form finiteness
    test fails.  For a whole-line model the lowest regime extends to -inf;
    there only nonnegative integer m are meaningful (signed powers).
    """
    model = dist.model
    kind = state_space(model)
    if kind is StateSpace.WHOLE_LINE and (regime is None or regime == 0):
        if m < 0 or m != int(m):
            raise StationaryError(
                "whole-line support requires nonnegative integer moment orders"
            )
    if not _moment_gate(model, m, regime):
        return math.inf

    segments = _segment_bounds(model)
    if regime is not None:
        segments = [segments[regime]]
    f = lambda x: x**m * speed_density(model, x, dist.ref)
    total = 0.0
    for lo, hi in segments:
        total += _quad_segment(f, lo, hi)
    return total / dist.normalization


def sample_stationary(dist: StationaryDistribution, rng, n: int) -> np.ndarray:
    """Draw n variates by inverse-cdf interpolation on the tabulated law."""
    if n == 0:
        return np.empty(0)
    cdf, grid = dist.cdf, dist.grid
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    u = rng.random(n)
    return np.interp(u, cdf[keep], grid[keep])


def export_density_csv(dist: StationaryDistribution, path) -> None:
    """Write the tabulated law as CSV with columns x,density,cdf."""
    with open(path, "w") as fh:
        fh.write("x,density,cdf\n")
        for x, d, c in zip(dist.grid, dist.density, dist.cdf):
            fh.write(f"{x:.17g},{d:.17g},{c:.17g}\n")
