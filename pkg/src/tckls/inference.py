"""Threshold detection: quasi-likelihood-ratio scan with bootstrap calibration.

To test whether one regime interval hides an extra threshold, candidate
split points sweep an affine grid between the 20th and 80th percentile of
the in-segment data.  For each candidate the drift is refitted with the
split inserted and the statistic is twice the gain in the discretized
quasi-likelihood.  Because the estimators are local to their regime, the
gain reduces to the tested segment's own contribution; the scan exploits
this by sorting the in-segment observations once and reading any
candidate's sub-sums off prefix tables.

The null distribution of the maximal statistic is bootstrapped:
trajectories are resimulated under the fitted no-extra-threshold model on
the very same observation grid (with Euler substeps), rescanned, and the
p-value is the plain counting fraction #{T_data < T_boot} / n_boot.

The default drift fit for the statistic is the quasi-likelihood maximizer
itself, which makes every scanned statistic nonnegative by construction
(nested maximization of one objective).  `drift_fit="mle"` instead fits by
the likelihood maximizer (volatility estimated from the brackets) and plugs
it into the quasi-likelihood; that variant is not guaranteed nonnegative at
finite step sizes.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import deterministic_map
from .estimators import DriftEstimate, estimate_sigma, mle, qmle
from .model import (
    EstimatorKind,
    ModelError,
    RegimeGeometry,
    RegimeParams,
    ThresholdModel,
    classify_ergodicity,
)
from .simulate import simulate_on_grid
from .statistics import (
    ObservationSet,
    compute_QM,
    compute_brackets,
    compute_modified_M,
    mle_q_exponents,
)

__all__ = [
    "ThresholdTestResult",
    "DetectionStep",
    "DetectionReport",
    "qlr_statistic",
    "scan",
    "pvalue_from_stats",
    "bootstrap_pvalue",
    "sequential_detection",
    "write_curve_csv",
]

_DET_EPS = 1e-12


@dataclass(frozen=True)
class ThresholdTestResult:
    """Scan outcome on one segment, optionally with its bootstrap p-value."""

    segment: tuple
    candidates: np.ndarray
    statistic_curve: np.ndarray  # NaN where a candidate was not testable
    r_hat: float | None
    T_data: float  # -inf when the whole scan is degenerate
    p_value: float | None = None
    n_boot: int = 0
    decision: str | None = None  # "reject" | "accept"
    degenerate: bool = False
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "segment": [_json_float(self.segment[0]), _json_float(self.segment[1])],
            "r_hat": None if self.r_hat is None else float(self.r_hat),
            "T_data": _json_float(self.T_data),
            "p_value": None if self.p_value is None else float(self.p_value),
            "n_boot": self.n_boot,
            "decision": self.decision,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
            "n_candidates": int(self.candidates.size),
        }


def _json_float(x: float):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return float(x)


@dataclass(frozen=True)
class DetectionStep:
    n_thresholds_before: int
    result: ThresholdTestResult

    def to_dict(self) -> dict:
        return {"m": self.n_thresholds_before, **self.result.to_dict()}


@dataclass(frozen=True)
class DetectionReport:
    thresholds: tuple
    steps: tuple
    model: ThresholdModel | None
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "thresholds": [float(r) for r in self.thresholds],
            "steps": [s.to_dict() for s in self.steps],
            "model": None if self.model is None else self.model.to_dict(),
            "flags": list(self.flags),
        }


def _nearest_rank(sorted_vals: np.ndarray, p: float) -> float:
    rank = max(1, math.ceil(p * sorted_vals.size))
    return float(sorted_vals[rank - 1])


def _insert_threshold(geometry: RegimeGeometry, segment: int, rbar: float) -> RegimeGeometry:
    thr = list(geometry.thresholds)
    gams = list(geometry.gammas)
    thr.insert(segment, rbar)
    gams.insert(segment, gams[segment])  # the split halves inherit gamma
    return RegimeGeometry(tuple(thr), tuple(gams))


def _fit_for_kind(obs: ObservationSet, geometry: RegimeGeometry, kind: EstimatorKind):
    """Drift fit of the requested kind plus the statistics used to fit it."""
    if kind is EstimatorKind.QMLE:
        stats = compute_QM(obs, geometry, q_exponents=(0.0, 1.0, 2.0))
        return qmle(stats), stats
    q_exps = {
        j: sorted(set(mle_q_exponents(g)) | {0.0, 1.0, 2.0, round(2.0 * g, 12)})
        for j, g in enumerate(geometry.gammas)
    }
    stats = compute_QM(obs, geometry, q_exponents=q_exps)
    vol = estimate_sigma(stats, compute_brackets(stats))
    sigma_used = tuple(0.0 if s is None else s for s in vol.sigma)
    mcal = compute_modified_M(stats, sigma_used)
    return mle(stats, mcal), stats


def _quasi_likelihood_value(stats, drift: DriftEstimate) -> float:
    """Discretized quasi-likelihood at a drift fit (unfitted regimes give 0)."""
    total = 0.0
    for j, fit in enumerate(drift.fits):
        if fit is None:
            continue
        a, b = fit.a, fit.b
        total += (
            a * stats.m(j, 0.0)
            - b * stats.m(j, 1.0)
            - 0.5 * a * a * stats.q(j, 0.0)
            + a * b * stats.q(j, 1.0)
            - 0.5 * b * b * stats.q(j, 2.0)
        )
    return total


def qlr_statistic(
    obs: ObservationSet,
    geometry: RegimeGeometry,
    segment: int,
    rbar: float,
    drift_fit: str = "qmle",
    min_side: int = 10,
) -> float:
    """Statistic 2 (qL at split fit - qL at unsplit fit) for one candidate.

    Returns NaN when either side of the candidate has fewer than `min_side`
    increment-contributing observations or a fit degenerates.  This is the
    definitional implementation; `scan` evaluates whole grids much faster.
    """
    lo, hi = geometry.interval(segment)
    if not (lo < rbar < hi):
        raise ValueError(f"candidate {rbar} outside segment ({lo}, {hi})")
    xs = obs.values[:-1]
    n_left = int(np.count_nonzero((xs >= lo) & (xs < rbar)))
    n_right = int(np.count_nonzero((xs >= rbar) & (xs < hi)))
    if n_left < min_side or n_right < min_side:
        return math.nan
    kind = EstimatorKind(drift_fit)
    est0, stats0 = _fit_for_kind(obs, geometry, kind)
    g1 = _insert_threshold(geometry, segment, rbar)
    est1, stats1 = _fit_for_kind(obs, g1, kind)
    if (
        est0.fits[segment] is None
        or est1.fits[segment] is None
        or est1.fits[segment + 1] is None
    ):
        return math.nan
    return 2.0 * (
        _quasi_likelihood_value(stats1, est1) - _quasi_likelihood_value(stats0, est0)
    )


def _degenerate_result(segment, candidates, flag: str) -> ThresholdTestResult:
    return ThresholdTestResult(
        segment=segment,
        candidates=np.asarray(candidates, dtype=float),
        statistic_curve=np.full(len(candidates), math.nan),
        r_hat=None,
        T_data=-math.inf,
        degenerate=True,
        flags=(flag,),
    )


def _fast_qmle_curve(obs, geometry, segment, candidates, min_side):
    """Vectorized scan: sorted in-segment prefix sums, O(1) per candidate."""
    lo, hi = geometry.interval(segment)
    xs = obs.values[:-1]
    mask = (xs >= lo) & (xs < hi)
    sub = xs[mask]
    order = np.argsort(sub, kind="stable")
    sx = sub[order]
    dt = np.diff(obs.times)[mask][order]
    dx = np.diff(obs.values)[mask][order]

    def prefixed(arr):
        out = np.empty(arr.size + 1)
        out[0] = 0.0
        np.cumsum(arr, out=out[1:])
        return out

    q0 = prefixed(dt)
    q1 = prefixed(sx * dt)
    q2 = prefixed(sx * sx * dt)
    m0 = prefixed(dx)
    m1 = prefixed(sx * dx)

    def fit_value(a0, a1, a2, b0, b1):
        """Max of the per-segment quadratic; NaN where degenerate."""
        det = a0 * a2 - a1 * a1
        good = (a0 > 0) & (det > _DET_EPS * np.abs(a0 * a2))
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (b0 * a2 - a1 * b1) / det
            b = (b0 * a1 - a0 * b1) / det
            val = 0.5 * (a * b0 - b * b1)
        return np.where(good, val, math.nan)

    total = np.array([q0[-1], q1[-1], q2[-1], m0[-1], m1[-1]])
    v_seg = fit_value(*total[:3], *total[3:])
    if math.isnan(v_seg):
        return None

    cands = np.asarray(candidates, dtype=float)
    pos = np.searchsorted(sx, cands, side="left")
    n_seg = sx.size
    v_left = fit_value(q0[pos], q1[pos], q2[pos], m0[pos], m1[pos])
    v_right = fit_value(
        q0[-1] - q0[pos], q1[-1] - q1[pos], q2[-1] - q2[pos],
        m0[-1] - m0[pos], m1[-1] - m1[pos],
    )
    curve = 2.0 * (v_left + v_right - v_seg)
    usable = (pos >= min_side) & (n_seg - pos >= min_side)
    usable &= (cands > lo) & (cands < hi)
    return np.where(usable, curve, math.nan)


def scan(
    obs: ObservationSet,
    geometry: RegimeGeometry,
    segment: int,
    n_grid: int = 1000,
    drift_fit: str = "qmle",
    min_side: int = 10,
) -> ThresholdTestResult:
    """Evaluate the statistic on the percentile grid of one segment.

    The grid has n_grid + 1 points from the 20th to the 80th percentile of
    the in-segment observations (nearest-rank).  Returns the whole curve,
    the first argmax candidate and the maximal statistic; degenerate when
    the segment is too thin to test.
    """
    lo, hi = geometry.interval(segment)
    seg_vals = obs.values[(obs.values >= lo) & (obs.values < hi)]
    if seg_vals.size < 2 * min_side:
        return _degenerate_result((lo, hi), [], "segment-too-small")
    sorted_vals = np.sort(seg_vals)
    q20 = _nearest_rank(sorted_vals, 0.2)
    q80 = _nearest_rank(sorted_vals, 0.8)
    if not (q80 > q20):
        return _degenerate_result((lo, hi), [], "flat-percentiles")
    js = np.arange(n_grid + 1) / n_grid
    candidates = q20 * (1.0 - js) + q80 * js

    if drift_fit == "qmle":
        curve = _fast_qmle_curve(obs, geometry, segment, candidates, min_side)
        if curve is None:
            return _degenerate_result((lo, hi), candidates, "h0-fit-degenerate")
    else:
        curve = np.array(
            [
                qlr_statistic(obs, geometry, segment, r, drift_fit, min_side)
                if lo < r < hi
                else math.nan
                for r in candidates
            ]
        )
    valid = np.isfinite(curve)
    if not valid.any():
        return _degenerate_result((lo, hi), candidates, "no-valid-candidate")
    t_data = float(np.nanmax(curve))
    first = int(np.flatnonzero(valid & (curve == t_data))[0])
    return ThresholdTestResult(
        segment=(lo, hi),
        candidates=candidates,
        statistic_curve=curve,
        r_hat=float(candidates[first]),
        T_data=t_data,
    )


def pvalue_from_stats(t_data: float, boot_stats) -> float:
    """Counting fraction #{t_data < T_j} / n."""
    boot_stats = list(boot_stats)
    if not boot_stats:
        raise ValueError("need at least one bootstrap statistic")
    return sum(1 for t in boot_stats if t_data < t) / len(boot_stats)


def _bootstrap_worker(payload):
    (model, times, x0, seed, geometry, segment, n_grid, drift_fit, min_side, substeps) = payload
    rng = np.random.default_rng(seed)
    values = simulate_on_grid(model, x0, times, rng, substeps=substeps)
    res = scan(
        ObservationSet(times=times, values=values),
        geometry,
        segment,
        n_grid=n_grid,
        drift_fit=drift_fit,
        min_side=min_side,
    )
    # a degenerate bootstrap scan counts as exceeding (conservative)
    return math.inf if res.degenerate else res.T_data


def bootstrap_pvalue(
    obs: ObservationSet,
    model_h0: ThresholdModel,
    geometry: RegimeGeometry,
    segment: int,
    t_data: float,
    n_boot: int,
    seed,
    n_grid: int = 1000,
    drift_fit: str = "qmle",
    min_side: int = 10,
    substeps: int = 10,
    start: str = "data",
    n_jobs: int = 1,
):
    """Parametric bootstrap of the scan maximum under the fitted null model.

    Trajectories are simulated on the data's own observation grid (substep
    refined) starting from the first observed value (or a stationary draw
    with start="stationary").  Returns (p_value, bootstrap statistics).
    """
    if n_boot < 1:
        raise ValueError("n_boot must be at least 1")
    erg = classify_ergodicity(model_h0)
    if not erg.ergodic:
        raise ModelError(f"fitted null model is not ergodic: {erg.reason}")
    times = obs.times - obs.times[0]
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_boot)
    if start == "data":
        x0s = [float(obs.values[0])] * n_boot
    elif start == "stationary":
        from .stationary import build_stationary, sample_stationary

        dist = build_stationary(model_h0)
        draw_rng = np.random.default_rng(ss.spawn(1)[0])
        x0s = [float(x) for x in sample_stationary(dist, draw_rng, n_boot)]
    else:
        raise ValueError(f"unknown start {start!r}")
    payloads = [
        (model_h0, times, x0s[k], children[k], geometry, segment, n_grid, drift_fit, min_side, substeps)
        for k in range(n_boot)
    ]
    boot = deterministic_map(_bootstrap_worker, payloads, n_jobs=n_jobs)
    return pvalue_from_stats(t_data, boot), boot


def _fitted_model(obs, geometry, drift_fit) -> ThresholdModel:
    """Full model from the drift fit of the requested kind plus sigma_hat."""
    from .estimators import estimate_full

    res = estimate_full(obs, geometry)
    drift = res.drift(EstimatorKind(drift_fit))
    regimes = []
    for j in range(geometry.n_regimes):
        fit = drift.params(j)
        sig = res.sigma.sigma[j]
        if fit is None or sig is None or not (sig > 0):
            raise ModelError(f"regime {j} not estimable ({drift.flags[j] or 'sigma'})")
        regimes.append(RegimeParams(a=fit.a, b=fit.b, sigma=sig, gamma=geometry.gammas[j]))
    return ThresholdModel(regimes=tuple(regimes), thresholds=geometry.thresholds)


def sequential_detection(
    obs: ObservationSet,
    gamma: float,
    alpha: float = 0.05,
    n_grid: int = 1000,
    n_boot: int = 1000,
    seed=0,
    drift_fit: str = "qmle",
    min_side: int = 10,
    substeps: int = 10,
    start: str = "data",
    n_jobs: int = 1,
    max_thresholds: int = 16,
) -> DetectionReport:
    """Left-to-right recursive threshold search.

    The whole state space is tested first; on rejection the argmax candidate
    becomes a threshold and the two sub-segments are tested in turn (left
    first, depth first), always under the geometry holding every threshold
    accepted so far.  Segments too thin to test, or whose null fit cannot be
    simulated, are accepted with a flag.  Deterministic given the seed.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be at least 1")
    master = (
        seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    )
    thresholds: list[float] = []
    steps: list[DetectionStep] = []
    flags: list[str] = []

    def geometry_now() -> RegimeGeometry:
        return RegimeGeometry(tuple(thresholds), (gamma,) * (len(thresholds) + 1))

    def process(lo: float, hi: float) -> None:
        geo = geometry_now()
        segment = bisect.bisect_right(thresholds, lo) if math.isfinite(lo) else 0
        res = scan(obs, geo, segment, n_grid=n_grid, drift_fit=drift_fit, min_side=min_side)
        step_seed = master.spawn(1)[0]
        if res.degenerate:
            res = replace(res, decision="accept")
            steps.append(DetectionStep(len(thresholds), res))
            return
        try:
            model_h0 = _fitted_model(obs, geo, drift_fit)
            p, _ = bootstrap_pvalue(
                obs,
                model_h0,
                geo,
                segment,
                res.T_data,
                n_boot,
                step_seed,
                n_grid=n_grid,
                drift_fit=drift_fit,
                min_side=min_side,
                substeps=substeps,
                start=start,
                n_jobs=n_jobs,
            )
        except ModelError as exc:
            res = replace(res, decision="accept", flags=res.flags + (f"h0-model: {exc}",))
            steps.append(DetectionStep(len(thresholds), res))
            return
        reject = p < alpha and len(thresholds) < max_thresholds
        res = replace(res, p_value=p, n_boot=n_boot, decision="reject" if reject else "accept")
        steps.append(DetectionStep(len(thresholds), res))
        if reject:
            r_hat = res.r_hat
            bisect.insort(thresholds, r_hat)
            process(lo, r_hat)
            process(r_hat, hi)

    lo0 = -math.inf if gamma == 0.0 else 0.0
    process(lo0, math.inf)

    final_model = None
    try:
        final_model = _fitted_model(obs, geometry_now(), drift_fit)
    except ModelError as exc:
        flags.append(f"final-fit: {exc}")
    return DetectionReport(
        thresholds=tuple(thresholds), steps=tuple(steps), model=final_model, flags=tuple(flags)
    )


def write_curve_csv(result: ThresholdTestResult, path) -> None:
    """Statistic curve as CSV with columns rbar,statistic."""
    with open(path, "w") as fh:
        fh.write("rbar,statistic\n")
        for r, t in zip(result.candidates, result.statistic_curve):
            fh.write(f"{r:.17g},{t:.17g}\n")
