"""Closed-form drift estimators, the volatility estimator and error bars.

Per regime the drift pair solves a 2x2 linear system assembled from the Q/M
sums (quasi-likelihood version) or from the Q sums and modified increments
(likelihood version).  Volatility per regime is the square root of the
bracket statistic over Q^{j, 2 gamma_j}.  Asymptotic covariances for
sqrt(T) (theta_hat - theta) come from the same Q sums; two-sided normal
confidence intervals follow.

Regimes the path never visits, or whose normal-equation determinant is
numerically zero, carry a marker instead of numbers; nothing raises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import EstimatorKind, RegimeGeometry
from .statistics import (
    BracketStatistics,
    ModifiedIncrements,
    ObservationSet,
    PathStatistics,
    compute_QM,
    compute_brackets,
    compute_modified_M,
    full_q_exponents,
)

__all__ = [
    "RegimeFit",
    "DriftEstimate",
    "VolEstimate",
    "AsymptoticCovariance",
    "EstimationResult",
    "qmle",
    "mle",
    "estimate_sigma",
    "asymptotic_covariance",
    "estimate_full",
]

DEGENERACY_EPS = 1e-12


@dataclass(frozen=True)
class RegimeFit:
    a: float
    b: float


@dataclass(frozen=True)
class DriftEstimate:
    kind: EstimatorKind
    fits: tuple  # RegimeFit or None per regime
    flags: tuple  # "" | "unvisited" | "degenerate"

    def params(self, j: int) -> RegimeFit | None:
        return self.fits[j]


@dataclass(frozen=True)
class VolEstimate:
    sigma: tuple  # float or None per regime
    clamped: tuple  # True where a negative bracket was clamped to 0
    flags: tuple


@dataclass(frozen=True)
class AsymptoticCovariance:
    kind: EstimatorKind
    matrices: tuple  # 2x2 ndarray or None per regime


def _solve_pair(qa: float, qb: float, qc: float, v0: float, v1: float):
    """Maximizer of v0*a - v1*b - a^2/2*qa + a*b*qb - b^2/2*qc.

    Returns (a, b) or None when the Gram determinant qa*qc - qb^2 is
    numerically degenerate (constant-in-regime path).
    """
    det = qa * qc - qb * qb
    if not (qa > 0.0) or not (qc >= 0.0) or det <= DEGENERACY_EPS * abs(qa * qc):
        return None
    return ((v0 * qc - qb * v1) / det, (v0 * qb - qa * v1) / det)


def qmle(stats: PathStatistics) -> DriftEstimate:
    """Drift maximizing the discretized quasi-likelihood (sigma-free)."""
    fits, flags = [], []
    for j in range(stats.geometry.n_regimes):
        if stats.q(j, 0.0) == 0.0:
            fits.append(None)
            flags.append("unvisited")
            continue
        sol = _solve_pair(
            stats.q(j, 0.0), stats.q(j, 1.0), stats.q(j, 2.0), stats.m(j, 0.0), stats.m(j, 1.0)
        )
        fits.append(RegimeFit(*sol) if sol else None)
        flags.append("" if sol else "degenerate")
    return DriftEstimate(EstimatorKind.QMLE, tuple(fits), tuple(flags))


def mle(stats: PathStatistics, mcal: ModifiedIncrements) -> DriftEstimate:
    """Drift maximizing the discretized likelihood (modified increments)."""
    fits, flags = [], []
    for j in range(stats.geometry.n_regimes):
        g = stats.geometry.gammas[j]
        if stats.q(j, 0.0) == 0.0:
            fits.append(None)
            flags.append("unvisited")
            continue
        sol = _solve_pair(
            stats.q(j, -2.0 * g),
            stats.q(j, 1.0 - 2.0 * g),
            stats.q(j, 2.0 - 2.0 * g),
            mcal.get(j, -2.0 * g),
            mcal.get(j, 1.0 - 2.0 * g),
        )
        fits.append(RegimeFit(*sol) if sol else None)
        flags.append("" if sol else "degenerate")
    return DriftEstimate(EstimatorKind.MLE, tuple(fits), tuple(flags))


def estimate_sigma(stats: PathStatistics, brackets: BracketStatistics) -> VolEstimate:
    """sigma_hat_j = sqrt(bracket_j / Q^{j, 2 gamma_j}), clamping negative
    brackets (a coarse-grid artifact) to zero with a flag."""
    sig, clamped, flags = [], [], []
    for j in range(stats.geometry.n_regimes):
        g = stats.geometry.gammas[j]
        denom = stats.q(j, 2.0 * g)
        if denom <= 0.0 or stats.q(j, 0.0) == 0.0:
            sig.append(None)
            clamped.append(False)
            flags.append("unvisited")
            continue
        q_j = brackets.get(j)
        if q_j < 0.0:
            sig.append(0.0)
            clamped.append(True)
            flags.append("clamped")
        else:
            sig.append(math.sqrt(q_j / denom))
            clamped.append(False)
            flags.append("")
    return VolEstimate(tuple(sig), tuple(clamped), tuple(flags))


def _q_matrix(stats: PathStatistics, j: int, g: float) -> np.ndarray | None:
    """[[Q^{-2g}, -Q^{1-2g}], [-Q^{1-2g}, Q^{2-2g}]] / T, or None if singular."""
    t = stats.horizon
    qa = stats.q(j, -2.0 * g) / t
    qb = stats.q(j, 1.0 - 2.0 * g) / t
    qc = stats.q(j, 2.0 - 2.0 * g) / t
    det = qa * qc - qb * qb
    if not (qa > 0.0) or det <= DEGENERACY_EPS * abs(qa * qc):
        return None
    return np.array([[qa, -qb], [-qb, qc]])


def asymptotic_covariance(
    stats: PathStatistics, kind: EstimatorKind, sigma
) -> AsymptoticCovariance:
    """Covariance matrices of sqrt(T) (theta_hat_j - theta_j).

    The likelihood version is sigma_j^2 times the inverse of the Q-matrix at
    the regime's own exponent; the quasi-likelihood version is the sandwich
    with the outer matrix at exponent 0 and the middle one at -gamma_j.
    Both coincide when gamma_j = 0.
    """
    sig_values = sigma.sigma if isinstance(sigma, VolEstimate) else tuple(sigma)
    mats = []
    for j in range(stats.geometry.n_regimes):
        g = stats.geometry.gammas[j]
        s = sig_values[j]
        if s is None:
            mats.append(None)
            continue
        if kind is EstimatorKind.MLE:
            base = _q_matrix(stats, j, g)
            gamma_mat = None if base is None else np.linalg.inv(base)
        else:
            outer = _q_matrix(stats, j, 0.0)
            middle = _q_matrix(stats, j, -g)
            if outer is None or middle is None:
                gamma_mat = None
            else:
                outer_inv = np.linalg.inv(outer)
                gamma_mat = outer_inv @ middle @ outer_inv
        if gamma_mat is None:
            mats.append(None)
            continue
        cov = s * s * gamma_mat
        mats.append(0.5 * (cov + cov.T))
    return AsymptoticCovariance(kind, tuple(mats))


@dataclass(frozen=True)
class EstimationResult:
    """Everything the pipeline produces for one observation set."""

    geometry: RegimeGeometry
    qmle: DriftEstimate
    mle: DriftEstimate
    sigma: VolEstimate
    cov: dict  # EstimatorKind -> AsymptoticCovariance
    ci: dict  # EstimatorKind -> tuple per regime: {"a": (lo, hi), "b": (lo, hi)} or None
    horizon: float
    n_increments: int
    max_gap: float
    alpha: float
    sigma_source: str  # "estimated" | "known"

    def drift(self, kind: EstimatorKind) -> DriftEstimate:
        return self.qmle if kind is EstimatorKind.QMLE else self.mle

    def to_dict(self) -> dict:
        def regime_record(kind, j):
            fit = self.drift(kind).fits[j]
            if fit is None:
                return {"flag": self.drift(kind).flags[j]}
            mat = self.cov[kind].matrices[j]
            rec = {
                "a": fit.a,
                "b": fit.b,
                "sigma": self.sigma.sigma[j],
                "kind": kind.value,
            }
            if mat is not None:
                rec["cov"] = [[float(v) for v in row] for row in mat]
            ci = self.ci[kind][j]
            if ci is not None:
                rec["ci"] = {k: [float(lo), float(hi)] for k, (lo, hi) in ci.items()}
            flag = self.drift(kind).flags[j]
            if flag:
                rec["flag"] = flag
            return rec

        return {
            "T_N": self.horizon,
            "N": self.n_increments,
            "Delta_N": self.max_gap,
            "alpha": self.alpha,
            "sigma_source": self.sigma_source,
            "thresholds": list(self.geometry.thresholds),
            "gammas": list(self.geometry.gammas),
            "sigma": [s if s is None else float(s) for s in self.sigma.sigma],
            "estimates": {
                kind.value: [
                    regime_record(kind, j) for j in range(self.geometry.n_regimes)
                ]
                for kind in (EstimatorKind.MLE, EstimatorKind.QMLE)
            },
        }


def _intervals(drift: DriftEstimate, cov: AsymptoticCovariance, t: float, alpha: float):
    z = norm.ppf(1.0 - alpha / 2.0)
    out = []
    for fit, mat in zip(drift.fits, cov.matrices):
        if fit is None or mat is None:
            out.append(None)
            continue
        half_a = z * math.sqrt(max(mat[0, 0], 0.0) / t)
        half_b = z * math.sqrt(max(mat[1, 1], 0.0) / t)
        out.append(
            {"a": (fit.a - half_a, fit.a + half_a), "b": (fit.b - half_b, fit.b + half_b)}
        )
    return tuple(out)


def estimate_full(
    obs: ObservationSet,
    geometry: RegimeGeometry,
    sigma_known=None,
    alpha: float = 0.05,
) -> EstimationResult:
    """Run the whole pipeline: statistics, volatility, both drift estimators,
    covariances and confidence intervals.

    When `sigma_known` is given it feeds the modified increments and the
    covariance scaling in place of the bracket estimate (the bracket
    estimate is still reported).
    """
    geo = geometry
    q_exps = {j: full_q_exponents(g) for j, g in enumerate(geo.gammas)}
    stats = compute_QM(obs, geo, q_exponents=q_exps, m_exponents=(0.0, 1.0))
    brackets = compute_brackets(stats)
    vol = estimate_sigma(stats, brackets)

    if sigma_known is not None:
        sigma_used = tuple(float(s) for s in sigma_known)
        if len(sigma_used) != geo.n_regimes:
            raise ValueError(f"need {geo.n_regimes} known sigma values")
        source = "known"
    else:
        sigma_used = tuple(0.0 if s is None else s for s in vol.sigma)
        source = "estimated"

    mcal = compute_modified_M(stats, sigma_used)
    drift_q = qmle(stats)
    drift_m = mle(stats, mcal)
    cov = {
        EstimatorKind.MLE: asymptotic_covariance(stats, EstimatorKind.MLE, sigma_used),
        EstimatorKind.QMLE: asymptotic_covariance(stats, EstimatorKind.QMLE, sigma_used),
    }
    ci = {
        kind: _intervals(drift, cov[kind], stats.horizon, alpha)
        for kind, drift in ((EstimatorKind.MLE, drift_m), (EstimatorKind.QMLE, drift_q))
    }
    return EstimationResult(
        geometry=geo,
        qmle=drift_q,
        mle=drift_m,
        sigma=vol,
        cov=cov,
        ci=ci,
        horizon=stats.horizon,
        n_increments=stats.n_increments,
        max_gap=stats.max_gap,
        alpha=alpha,
        sigma_source=source,
    )
