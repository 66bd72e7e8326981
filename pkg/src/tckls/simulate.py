"""Trajectory simulation for threshold CKLS processes.

The scheme is the explicit Euler recursion

    X_{k+1} = | X_k + h (a_j - b_j X_k) + sqrt(h) sigma_j X_k^{gamma_j} G_k |

with all coefficients taken from the regime of the step's starting point,
and the reflection |.| applied only when the state space is nonnegative
(for a whole-line model, gamma_0 = 0, the plain Euler step is used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import euler_path_kernel
from .model import ModelError, StateSpace, ThresholdModel, classify_ergodicity, state_space
from .statistics import ObservationSet

__all__ = [
    "Trajectory",
    "euler_step",
    "simulate_path",
    "simulate_on_grid",
    "warm_start",
    "subsample",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True)
class Trajectory:
    """Simulated path sampled on a strictly increasing grid starting at 0."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape or times.size < 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times[0] != 0.0:
            raise ValueError("trajectory must start at time 0")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


def _coef_arrays(model: ThresholdModel):
    thr = np.asarray(model.thresholds, dtype=float)
    a = np.array([r.a for r in model.regimes])
    b = np.array([r.b for r in model.regimes])
    sig = np.array([r.sigma for r in model.regimes])
    gam = np.array([r.gamma for r in model.regimes])
    return thr, a, b, sig, gam


def _check_x0(model: ThresholdModel, x0: float) -> None:
    if state_space(model) is not StateSpace.WHOLE_LINE and not (x0 > 0):
        raise ModelError(f"initial value must be positive, got {x0}")


def euler_step(model: ThresholdModel, x: float, h: float, g: float) -> float:
    """One scheme step from x with step h and standard normal draw g."""
    if h <= 0:
        raise ValueError("step must be positive")
    j = model.regime_of(x)
    reg = model.regimes[j]
    gam = reg.gamma
    if gam == 0.0:
        pw = 1.0
    elif gam == 0.5:
        pw = math.sqrt(abs(x))
    elif gam == 1.0:
        pw = abs(x)
    else:
        pw = abs(x) ** gam
    x_new = x + (reg.a - reg.b * x) * h + reg.sigma * pw * math.sqrt(h) * g
    if state_space(model) is not StateSpace.WHOLE_LINE and x_new < 0.0:
        x_new = -x_new
    return x_new


def _run_kernel(model: ThresholdModel, x0: float, dts: np.ndarray, rng) -> np.ndarray:
    thr, a, b, sig, gam = _coef_arrays(model)
    reflect = state_space(model) is not StateSpace.WHOLE_LINE
    noise = rng.standard_normal(dts.size)
    return euler_path_kernel(float(x0), dts, noise, thr, a, b, sig, gam, reflect)


def simulate_path(
    model: ThresholdModel, x0: float, n_per_unit: int, T: float, rng
) -> Trajectory:
    """Simulate on the equally spaced grid of step 1/n_per_unit up to ceil(T*n)/n.

    Deterministic given (model, x0, T, n_per_unit) and the rng state.
    """
    if n_per_unit < 1:
        raise ValueError("n_per_unit must be at least 1")
    if not (T > 0):
        raise ValueError("horizon must be positive")
    _check_x0(model, x0)
    n_steps = math.ceil(T * n_per_unit)
    h = 1.0 / n_per_unit
    values = _run_kernel(model, x0, np.full(n_steps, h), rng)
    times = np.arange(n_steps + 1) * h
    return Trajectory(times=times, values=values)


def simulate_on_grid(
    model: ThresholdModel, x0: float, times: np.ndarray, rng, substeps: int = 1
) -> np.ndarray:
    """Values of a fresh simulation at the given times (t_0 = 0 required).

    Each observation gap is refined into `substeps` equal Euler steps; only
    the values on the requested grid are returned.
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing and start at 0")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    _check_x0(model, x0)
    dts = np.repeat(np.diff(times) / substeps, substeps)
    path = _run_kernel(model, x0, dts, rng)
    return path[:: substeps]


def warm_start(
    model: ThresholdModel,
    rng,
    method: str = "burn-in",
    horizon: float = 1000.0,
    n_per_unit: int = 100,
    dist=None,
) -> float:
    """Initial value approximately distributed under the stationary law.

    method="burn-in" runs the scheme from x0 = 1 over `horizon` time units
    and returns the final value (horizon 0 returns 1.0 untouched);
    method="exact-mu" draws from the tabulated stationary law (built on the
    fly unless `dist` is supplied).
    """
    erg = classify_ergodicity(model)
    if not erg.ergodic:
        raise ModelError(f"warm start needs an ergodic model: {erg.reason}")
    if method == "burn-in":
        if horizon == 0:
            return 1.0
        return float(simulate_path(model, 1.0, n_per_unit, horizon, rng).values[-1])
    if method == "exact-mu":
        from .stationary import build_stationary, sample_stationary

        if dist is None:
            dist = build_stationary(model)
        return float(sample_stationary(dist, rng, 1)[0])
    raise ValueError(f"unknown warm start method {method!r}")


def subsample(traj: Trajectory, stride: int | None = None, times=None) -> ObservationSet:
    """Select observations from a trajectory by stride or explicit times.

    Explicit times must already be grid points (matched within 1e-12); the
    initial time 0 is always kept.
    """
    if (stride is None) == (times is None):
        raise ValueError("pass exactly one of stride or times")
    if stride is not None:
        if stride < 1:
            raise ValueError("stride must be at least 1")
        idx = np.arange(0, traj.times.size, stride)
    else:
        wanted = np.asarray(times, dtype=float)
        idx = np.searchsorted(traj.times, wanted)
        idx = np.clip(idx, 0, traj.times.size - 1)
        left = np.clip(idx - 1, 0, traj.times.size - 1)
        take_left = np.abs(traj.times[left] - wanted) < np.abs(traj.times[idx] - wanted)
        idx = np.where(take_left, left, idx)
        bad = np.abs(traj.times[idx] - wanted) > 1e-12 * np.maximum(1.0, np.abs(wanted))
        if np.any(bad):
            missing = wanted[bad][:5]
            raise ValueError(f"requested times absent from the trajectory: {missing}")
        if idx[0] != 0:
            idx = np.concatenate(([0], idx))
    return ObservationSet(times=traj.times[idx], values=traj.values[idx])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("time,value\n")
        for t, v in zip(traj.times, traj.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "time,value":
            raise ValueError(f"expected 'time,value' header, got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Trajectory(times=data[:, 0], values=data[:, 1])
