"""Monte Carlo studies: estimator accuracy, normality of errors, and
size/power of the threshold test.

Replicates get independent child seeds spawned from the master seed and are
aggregated by index, so reports are identical for any worker count.  Where
a true parameter is zero its error is reported in absolute terms and
flagged (relative error is undefined there).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import kstest

from ._parallel import deterministic_map
from .estimators import estimate_full
from .inference import sequential_detection
from .model import EstimatorKind, ModelError, ThresholdModel, classify_ergodicity
from .simulate import simulate_on_grid, warm_start
from .statistics import ObservationSet
from .stationary import build_stationary, sample_stationary, stationary_moment

__all__ = [
    "StudyConfig",
    "StudyReport",
    "run_rmse_study",
    "run_clt_study",
    "run_test_calibration",
    "theoretical_gamma_matrices",
]

_CONFIG_KEYS = {
    "model",
    "T",
    "N",
    "n_rep",
    "seed",
    "which",
    "alpha",
    "n_boot",
    "n_grid",
    "gamma",
    "min_side",
    "substeps",
    "n_jobs",
    "warm_horizon",
    "sigma_known",
}


@dataclass(frozen=True)
class StudyConfig:
    model: ThresholdModel
    T: float
    N: int
    n_rep: int
    seed: int
    which: str
    alpha: float = 0.05
    n_boot: int = 200
    n_grid: int = 1000
    gamma: float | None = None  # test-study geometry exponent
    min_side: int = 10
    substeps: int = 10
    n_jobs: int = 1
    warm_horizon: float | None = None
    sigma_known: tuple | None = None

    def __post_init__(self):
        if self.n_rep < 1:
            raise ValueError("n_rep must be at least 1")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.which not in ("rmse", "clt", "test_size", "test_power"):
            raise ValueError(f"unknown study {self.which!r}")

    @property
    def grid_times(self) -> np.ndarray:
        return np.arange(self.N + 1) * (self.T / self.N)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        data = dict(data)
        data["model"] = ThresholdModel.from_dict(data["model"])
        if data.get("sigma_known") is not None:
            data["sigma_known"] = tuple(data["sigma_known"])
        return cls(**data)


@dataclass(frozen=True)
class StudyReport:
    which: str
    n_rep: int
    n_failures: int
    tables: dict
    raw: dict
    seed: int
    runtime_s: float

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "which": self.which,
            "n_rep": self.n_rep,
            "n_failures": self.n_failures,
            "seed": self.seed,
            "tables": self.tables,
        }
        if include_runtime:
            out["runtime_s"] = self.runtime_s
        return out


def _require_ergodic(model: ThresholdModel) -> None:
    erg = classify_ergodicity(model)
    if not erg.ergodic:
        raise ModelError(f"study model must be ergodic: {erg.reason}")


# -- replicate workers (top level: picklable) --------------------------------


def _estimate_replicate(payload):
    model, times, x0, child, sigma_known = payload
    rng = np.random.default_rng(child)
    values = simulate_on_grid(model, x0, times, rng, substeps=1)
    try:
        obs = ObservationSet(times=times, values=values)
        res = estimate_full(obs, model.geometry, sigma_known=sigma_known)
    except Exception as exc:  # replicate failures are counted, not fatal
        return {"error": repr(exc)}
    out = {"error": None, "sigma": res.sigma.sigma, "ci": {}, "theta": {}}
    for kind in EstimatorKind:
        drift = res.drift(kind)
        out["theta"][kind.value] = [
            None if f is None else (f.a, f.b) for f in drift.fits
        ]
        out["ci"][kind.value] = res.ci[kind]
    return out


def _detection_replicate(payload):
    model, times, x0, child, gamma, alpha, n_grid, n_boot, min_side, substeps = payload
    sim_seed, det_seed = child.spawn(2)
    rng = np.random.default_rng(sim_seed)
    values = simulate_on_grid(model, x0, times, rng, substeps=substeps)
    try:
        obs = ObservationSet(times=times, values=values)
        report = sequential_detection(
            obs,
            gamma=gamma,
            alpha=alpha,
            n_grid=n_grid,
            n_boot=n_boot,
            seed=det_seed,
            min_side=min_side,
            substeps=substeps,
        )
    except Exception as exc:
        return {"error": repr(exc)}
    return {
        "error": None,
        "n_found": len(report.thresholds),
        "thresholds": [float(r) for r in report.thresholds],
    }


# -- study drivers -----------------------------------------------------------


def _true_theta(model: ThresholdModel):
    return [(r.a, r.b) for r in model.regimes]


def run_rmse_study(cfg: StudyConfig) -> StudyReport:
    """Relative RMSE and empirical bias of both drift estimators and sigma.

    One burn-in warm start picks the common initial value; every replicate
    then simulates on the cfg grid and runs the full estimation pipeline.
    """
    t_start = time.perf_counter()
    _require_ergodic(cfg.model)
    master = np.random.SeedSequence(cfg.seed)
    warm_child, *children = master.spawn(cfg.n_rep + 1)
    horizon = cfg.T if cfg.warm_horizon is None else cfg.warm_horizon
    n_per_unit = max(1, round(cfg.N / cfg.T))
    x0 = (
        warm_start(
            cfg.model,
            np.random.default_rng(warm_child),
            method="burn-in",
            horizon=horizon,
            n_per_unit=n_per_unit,
        )
        if horizon > 0
        else 1.0
    )
    times = cfg.grid_times
    payloads = [(cfg.model, times, x0, child, cfg.sigma_known) for child in children]
    results = deterministic_map(_estimate_replicate, payloads, n_jobs=cfg.n_jobs)

    truth = _true_theta(cfg.model)
    true_sigma = [r.sigma for r in cfg.model.regimes]
    n_regimes = len(truth)
    errors = {
        kind.value: {"a": [[] for _ in range(n_regimes)], "b": [[] for _ in range(n_regimes)]}
        for kind in EstimatorKind
    }
    sigma_errors = [[] for _ in range(n_regimes)]
    coverage = {
        kind.value: {"a": [0] * n_regimes, "b": [0] * n_regimes} for kind in EstimatorKind
    }
    cov_counts = {
        kind.value: {"a": [0] * n_regimes, "b": [0] * n_regimes} for kind in EstimatorKind
    }
    n_failures = 0
    for res in results:
        if res["error"] is not None:
            n_failures += 1
            continue
        for kind in EstimatorKind:
            for j in range(n_regimes):
                fit = res["theta"][kind.value][j]
                if fit is None:
                    continue
                errors[kind.value]["a"][j].append(fit[0] - truth[j][0])
                errors[kind.value]["b"][j].append(fit[1] - truth[j][1])
                ci = res["ci"][kind.value][j]
                if ci is not None:
                    for name, true_val in (("a", truth[j][0]), ("b", truth[j][1])):
                        lo, hi = ci[name]
                        cov_counts[kind.value][name][j] += 1
                        if lo <= true_val <= hi:
                            coverage[kind.value][name][j] += 1
        for j in range(n_regimes):
            if res["sigma"][j] is not None:
                sigma_errors[j].append(res["sigma"][j] - true_sigma[j])

    def summarize(errs, true_val):
        errs = np.asarray(errs)
        if errs.size == 0:
            return {"rmse": None, "eb": None, "relative": true_val != 0.0}
        rms = float(np.sqrt(np.mean(errs**2)))
        rec = {"eb": float(np.mean(errs)), "relative": true_val != 0.0}
        rec["rmse"] = rms / abs(true_val) if true_val != 0.0 else rms
        return rec

    tables = {"sigma": [summarize(sigma_errors[j], true_sigma[j]) for j in range(n_regimes)]}
    for kind in EstimatorKind:
        tables[kind.value] = {
            name: [
                summarize(errors[kind.value][name][j], truth[j][0 if name == "a" else 1])
                for j in range(n_regimes)
            ]
            for name in ("a", "b")
        }
        tables[f"{kind.value}_ci_coverage"] = {
            name: [
                (
                    coverage[kind.value][name][j] / cov_counts[kind.value][name][j]
                    if cov_counts[kind.value][name][j]
                    else None
                )
                for j in range(n_regimes)
            ]
            for name in ("a", "b")
        }
    raw = {"errors": errors, "sigma_errors": sigma_errors}
    return StudyReport(
        which="rmse",
        n_rep=cfg.n_rep,
        n_failures=n_failures,
        tables=tables,
        raw=raw,
        seed=cfg.seed,
        runtime_s=time.perf_counter() - t_start,
    )


def theoretical_gamma_matrices(model: ThresholdModel, dist=None) -> dict:
    """Asymptotic Gamma matrices per regime from the stationary moments.

    Returns {kind: [2x2 array or None per regime]}.  The entries are the
    long-run averages of the Q sums, so these are the limits the data-driven
    covariance estimates converge to.
    """
    if dist is None:
        dist = build_stationary(model)

    def q_inf(j, m):
        return stationary_moment(dist, m, regime=j)

    def mat(j, g):
        entries = [q_inf(j, -2.0 * g), q_inf(j, 1.0 - 2.0 * g), q_inf(j, 2.0 - 2.0 * g)]
        if any(not math.isfinite(e) for e in entries):
            return None
        m = np.array([[entries[0], -entries[1]], [-entries[1], entries[2]]])
        if np.linalg.det(m) <= 0:
            return None
        return m

    out = {}
    for kind in EstimatorKind:
        per = []
        for j, reg in enumerate(model.regimes):
            if kind is EstimatorKind.MLE:
                base = mat(j, reg.gamma)
                per.append(None if base is None else np.linalg.inv(base))
            else:
                outer = mat(j, 0.0)
                middle = mat(j, -reg.gamma)
                if outer is None or middle is None:
                    per.append(None)
                else:
                    inv = np.linalg.inv(outer)
                    per.append(inv @ middle @ inv)
        out[kind.value] = per
    return out


def run_clt_study(cfg: StudyConfig) -> StudyReport:
    """Normalized errors sqrt(T)(theta_hat - theta)/sd against N(0,1).

    The normalization uses the theoretical asymptotic standard deviation
    sqrt(sigma_j^2 Gamma_j) built from the stationary law, not from the
    data.  Reports per-parameter Kolmogorov-Smirnov distances and the
    coverage of the nominal 95% intervals.
    """
    t_start = time.perf_counter()
    _require_ergodic(cfg.model)
    dist = build_stationary(cfg.model)
    gammas = theoretical_gamma_matrices(cfg.model, dist)

    master = np.random.SeedSequence(cfg.seed)
    warm_child, *children = master.spawn(cfg.n_rep + 1)
    horizon = cfg.T if cfg.warm_horizon is None else cfg.warm_horizon
    n_per_unit = max(1, round(cfg.N / cfg.T))
    x0 = warm_start(
        cfg.model,
        np.random.default_rng(warm_child),
        method="burn-in",
        horizon=horizon,
        n_per_unit=n_per_unit,
    )
    times = cfg.grid_times
    payloads = [(cfg.model, times, x0, child, cfg.sigma_known) for child in children]
    results = deterministic_map(_estimate_replicate, payloads, n_jobs=cfg.n_jobs)

    truth = _true_theta(cfg.model)
    n_regimes = len(truth)
    sqrt_t = math.sqrt(cfg.T)
    z_samples = {
        kind.value: {"a": [[] for _ in range(n_regimes)], "b": [[] for _ in range(n_regimes)]}
        for kind in EstimatorKind
    }
    n_failures = 0
    for res in results:
        if res["error"] is not None:
            n_failures += 1
            continue
        for kind in EstimatorKind:
            for j, reg in enumerate(cfg.model.regimes):
                fit = res["theta"][kind.value][j]
                gam = gammas[kind.value][j]
                if fit is None or gam is None:
                    continue
                sd_a = reg.sigma * math.sqrt(gam[0, 0])
                sd_b = reg.sigma * math.sqrt(gam[1, 1])
                z_samples[kind.value]["a"][j].append(sqrt_t * (fit[0] - truth[j][0]) / sd_a)
                z_samples[kind.value]["b"][j].append(sqrt_t * (fit[1] - truth[j][1]) / sd_b)

    z_crit = 1.959963984540054
    tables = {}
    for kind in EstimatorKind:
        tables[kind.value] = {}
        for name in ("a", "b"):
            rows = []
            for j in range(n_regimes):
                zs = np.asarray(z_samples[kind.value][name][j])
                if zs.size == 0:
                    rows.append(None)
                    continue
                row = {"n": int(zs.size), "mean": float(zs.mean()), "sd": float(zs.std(ddof=1)) if zs.size > 1 else None}
                if zs.size > 1:
                    row["ks"] = float(kstest(zs, "norm").statistic)
                    row["coverage95"] = float(np.mean(np.abs(zs) <= z_crit))
                rows.append(row)
            tables[kind.value][name] = rows
    return StudyReport(
        which="clt",
        n_rep=cfg.n_rep,
        n_failures=n_failures,
        tables=tables,
        raw={"z": z_samples},
        seed=cfg.seed,
        runtime_s=time.perf_counter() - t_start,
    )


def run_test_calibration(cfg: StudyConfig) -> StudyReport:
    """Rejection frequency of the sequential detection over replicated data.

    With a threshold-free cfg.model this measures size; with a threshold
    model it measures power.  Initial values are exact stationary draws.
    """
    t_start = time.perf_counter()
    _require_ergodic(cfg.model)
    dist = build_stationary(cfg.model)
    gamma = cfg.gamma if cfg.gamma is not None else cfg.model.regimes[0].gamma

    master = np.random.SeedSequence(cfg.seed)
    x0_child, *children = master.spawn(cfg.n_rep + 1)
    x0s = sample_stationary(dist, np.random.default_rng(x0_child), cfg.n_rep)
    times = cfg.grid_times
    payloads = [
        (
            cfg.model,
            times,
            float(x0s[k]),
            children[k],
            gamma,
            cfg.alpha,
            cfg.n_grid,
            cfg.n_boot,
            cfg.min_side,
            cfg.substeps,
        )
        for k in range(cfg.n_rep)
    ]
    results = deterministic_map(_detection_replicate, payloads, n_jobs=cfg.n_jobs)

    n_failures = sum(1 for r in results if r["error"] is not None)
    found = [r["n_found"] for r in results if r["error"] is None]
    n_ok = len(found)
    rate = float(np.mean([n >= 1 for n in found])) if n_ok else None
    half = (
        1.959963984540054 * math.sqrt(rate * (1.0 - rate) / n_ok)
        if rate is not None and n_ok
        else None
    )
    tables = {
        "rejection_rate": rate,
        "mc_error_95": half,
        "n_effective": n_ok,
        "mean_thresholds_found": float(np.mean(found)) if n_ok else None,
    }
    return StudyReport(
        which=cfg.which,
        n_rep=cfg.n_rep,
        n_failures=n_failures,
        tables=tables,
        raw={"n_found": found},
        seed=cfg.seed,
        runtime_s=time.perf_counter() - t_start,
    )
