"""Command line interface.

Subcommands: simulate | estimate | test | study | stationary.  Every
command is deterministic given its flags and seed; parallel workers change
timing only, never output bytes.  Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .estimators import estimate_full
from .inference import sequential_detection, write_curve_csv
from .mc_harness import StudyConfig, run_clt_study, run_rmse_study, run_test_calibration
from .model import ModelError, RegimeGeometry, ThresholdModel
from .simulate import simulate_path, warm_start, write_trajectory_csv
from .statistics import ObservationSet, StatisticsError
from .stationary import build_stationary, export_density_csv, stationary_moment

__all__ = ["main", "entrypoint"]


class UsageError(Exception):
    """Configuration problems: mapped to exit code 2."""


def _load_model(path: str) -> ThresholdModel:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"model file not found: {path}")
    try:
        return ThresholdModel.from_json(p.read_text())
    except (json.JSONDecodeError, ModelError) as exc:
        raise UsageError(f"invalid model file {path}: {exc}") from exc


def _load_data(path: str, dt: float | None) -> ObservationSet:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"data file not found: {path}")
    with p.open() as fh:
        header = fh.readline().strip()
        try:
            if header == "time,value":
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
                times, values = data[:, 0], data[:, 1]
            elif header == "value":
                if dt is None:
                    raise UsageError(
                        f"{path} has a value-only column; pass --dt to set the time step"
                    )
                values = np.loadtxt(fh, ndmin=1)
                times = np.arange(values.size) * dt
            else:
                raise UsageError(
                    f"{path}: expected header 'time,value' or 'value', got {header!r}"
                )
        except ValueError as exc:
            raise UsageError(f"malformed data file {path}: {exc}") from exc
    try:
        return ObservationSet(times=times, values=values)
    except StatisticsError as exc:
        raise UsageError(f"invalid observations in {path}: {exc}") from exc


def _parse_floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok != "")
    except ValueError as exc:
        raise UsageError(f"could not parse {what} {text!r}") from exc


def _geometry(thresholds_text: str | None, gamma_text: str) -> RegimeGeometry:
    thresholds = _parse_floats(thresholds_text, "--thresholds") if thresholds_text else ()
    gammas = _parse_floats(gamma_text, "--gamma")
    if len(gammas) == 1:
        gammas = gammas * (len(thresholds) + 1)
    try:
        return RegimeGeometry(thresholds=thresholds, gammas=gammas)
    except ModelError as exc:
        raise UsageError(str(exc)) from exc


def _write_json(path: str, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def _cmd_simulate(args) -> int:
    model = _load_model(args.model)
    if args.steps_per_unit < 1 or args.T <= 0:
        raise UsageError("need --steps-per-unit >= 1 and --T > 0")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    if args.warm_exact:
        x0 = warm_start(model, rng, method="exact-mu")
    elif args.warmup > 0:
        x0 = warm_start(
            model, rng, method="burn-in", horizon=args.warmup, n_per_unit=args.steps_per_unit
        )
    else:
        x0 = args.x0
    traj = simulate_path(model, x0, args.steps_per_unit, args.T, rng)
    write_trajectory_csv(traj, args.output)
    print(
        f"wrote {args.output}: T={traj.horizon:g} N={traj.times.size - 1} "
        f"dt={1.0 / args.steps_per_unit:g} min={traj.values.min():.6g} "
        f"max={traj.values.max():.6g}"
    )
    return 0


def _print_estimate_table(result) -> None:
    print(f"T_N={result.horizon:g}  N={result.n_increments}  Delta_N={result.max_gap:g}")
    for kind in ("mle", "qmle"):
        print(f"[{kind}]")
        from .model import EstimatorKind

        drift = result.drift(EstimatorKind(kind))
        for j in range(result.geometry.n_regimes):
            fit = drift.params(j)
            sig = result.sigma.sigma[j]
            if fit is None:
                print(f"  regime {j}: {drift.flags[j]}")
                continue
            ci = result.ci[EstimatorKind(kind)][j]
            ci_a = f"[{ci['a'][0]:.4g}, {ci['a'][1]:.4g}]" if ci else "n/a"
            ci_b = f"[{ci['b'][0]:.4g}, {ci['b'][1]:.4g}]" if ci else "n/a"
            sig_text = "n/a" if sig is None else f"{sig:.4g}"
            print(
                f"  regime {j}: a={fit.a:.4g} {ci_a}  b={fit.b:.4g} {ci_b}  sigma={sig_text}"
            )


def _cmd_estimate(args) -> int:
    obs = _load_data(args.data, args.dt)
    geometry = _geometry(args.thresholds, args.gamma)
    sigma_known = (
        _parse_floats(args.sigma_known, "--sigma-known") if args.sigma_known else None
    )
    if sigma_known is not None and len(sigma_known) != geometry.n_regimes:
        raise UsageError(
            f"--sigma-known needs {geometry.n_regimes} values, got {len(sigma_known)}"
        )
    result = estimate_full(obs, geometry, sigma_known=sigma_known, alpha=args.alpha)
    if args.output:
        _write_json(args.output, result.to_dict())
    _print_estimate_table(result)
    return 0


def _cmd_test(args) -> int:
    if args.n_boot < 1:
        raise UsageError("--n-boot must be at least 1")
    if args.n_grid < 1:
        raise UsageError("--n-grid must be at least 1")
    obs = _load_data(args.data, args.dt)
    gammas = _parse_floats(args.gamma, "--gamma")
    if len(gammas) != 1:
        raise UsageError("--gamma takes a single exponent shared by all regimes")
    report = sequential_detection(
        obs,
        gamma=gammas[0],
        alpha=args.alpha,
        n_grid=args.n_grid,
        n_boot=args.n_boot,
        seed=args.seed,
        drift_fit=args.drift_fit,
        min_side=args.min_side,
        substeps=args.substeps,
        start=args.start,
        n_jobs=args.jobs,
    )
    for k, step in enumerate(report.steps):
        res = step.result
        lo, hi = res.segment
        seg = f"({lo:.6g}, {'inf' if math.isinf(hi) else f'{hi:.6g}'})"
        if res.degenerate:
            print(f"step {k}: m={step.n_thresholds_before} segment {seg}: {res.flags[0]}")
            continue
        print(
            f"step {k}: m={step.n_thresholds_before} segment {seg}: "
            f"T_data={res.T_data:.4g} r_hat={res.r_hat:.6g} "
            f"p={res.p_value if res.p_value is not None else 'n/a'} -> {res.decision}"
        )
    found = ", ".join(f"{r:.6g}" for r in report.thresholds) or "none"
    print(f"thresholds: {found}")
    if args.output:
        _write_json(args.output, report.to_dict())
    if args.curves_prefix:
        for k, step in enumerate(report.steps):
            if step.result.candidates.size:
                write_curve_csv(step.result, f"{args.curves_prefix}_step{k:02d}.csv")
    return 0


def _write_rmse_csv(report, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("kind,param,regime,value,relative,eb\n")
        for kind in ("mle", "qmle", "sigma"):
            if kind == "sigma":
                rows = {"sigma": report.tables["sigma"]}
            else:
                rows = report.tables[kind]
            for param, cells in rows.items():
                for j, cell in enumerate(cells):
                    if cell is None or cell["rmse"] is None:
                        continue
                    fh.write(
                        f"{kind},{param},{j},{cell['rmse']:.17g},"
                        f"{int(cell['relative'])},{cell['eb']:.17g}\n"
                    )


def _write_z_csv(report, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("kind,param,regime,z\n")
        for kind, per_param in report.raw["z"].items():
            for param, per_regime in per_param.items():
                for j, zs in enumerate(per_regime):
                    for z in zs:
                        fh.write(f"{kind},{param},{j},{z:.17g}\n")


def _cmd_study(args) -> int:
    p = Path(args.config)
    if not p.exists():
        raise UsageError(f"config file not found: {args.config}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid config JSON: {exc}") from exc
    which = args.kind.replace("-", "_")
    if "which" in data and data["which"] != which:
        raise UsageError(
            f"config says which={data['which']!r} but the subcommand is {args.kind!r}"
        )
    data["which"] = which
    if args.seed is not None:
        data["seed"] = args.seed
    if args.jobs is not None:
        data["n_jobs"] = args.jobs
    try:
        cfg = StudyConfig.from_dict(data)
    except (ValueError, ModelError) as exc:
        raise UsageError(f"bad study config: {exc}") from exc

    if which == "rmse":
        report = run_rmse_study(cfg)
    elif which == "clt":
        report = run_clt_study(cfg)
    else:
        report = run_test_calibration(cfg)

    _write_json(f"{args.output}.json", report.to_dict())
    if which == "rmse":
        _write_rmse_csv(report, f"{args.output}_table.csv")
    elif which == "clt":
        _write_z_csv(report, f"{args.output}_z.csv")
    print(
        f"study {which}: n_rep={report.n_rep} failures={report.n_failures} "
        f"runtime={report.runtime_s:.1f}s -> {args.output}.json"
    )
    return 0


def _cmd_stationary(args) -> int:
    model = _load_model(args.model)
    try:
        dist = build_stationary(model)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    export_density_csv(dist, args.output)
    mean = stationary_moment(dist, 1.0)
    second = stationary_moment(dist, 2.0)
    sd = math.sqrt(second - mean * mean) if math.isfinite(second) else math.inf
    print(
        f"wrote {args.output}: grid={dist.grid.size} mean={mean:.6g} sd={sd:.6g} "
        f"support=[{dist.grid[0]:.6g}, {dist.grid[-1]:.6g}]"
    )
    return 0


# -- parser ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tckls",
        description="Threshold CKLS diffusions: simulation, estimation, threshold tests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    sim.add_argument("--model", required=True, help="model JSON file")
    sim.add_argument("--T", type=float, required=True, help="time horizon")
    sim.add_argument("--steps-per-unit", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--x0", type=float, default=1.0)
    sim.add_argument("--warmup", type=float, default=0.0, help="burn-in time before t=0")
    sim.add_argument("--warm-exact", action="store_true", help="draw x0 from the stationary law")
    sim.add_argument("-o", "--output", required=True)
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate", help="drift and volatility estimates from CSV data")
    est.add_argument("--data", required=True, help="CSV with time,value or value column")
    est.add_argument("--dt", type=float, default=None, help="time step for value-only CSVs")
    est.add_argument("--thresholds", default=None, help="comma list, e.g. 1,1.5")
    est.add_argument("--gamma", required=True, help="comma list or single exponent")
    est.add_argument("--sigma-known", default=None, help="comma list of known sigmas")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("-o", "--output", default=None, help="result JSON path")
    est.set_defaults(func=_cmd_estimate)

    tst = sub.add_parser("test", help="sequential threshold detection")
    tst.add_argument("--data", required=True)
    tst.add_argument("--dt", type=float, default=None)
    tst.add_argument("--gamma", required=True, help="diffusion exponent, e.g. 0.5")
    tst.add_argument("--alpha", type=float, default=0.05)
    tst.add_argument("--n-grid", type=int, default=1000)
    tst.add_argument("--n-boot", type=int, default=1000)
    tst.add_argument("--seed", type=int, default=0)
    tst.add_argument("--min-side", type=int, default=10)
    tst.add_argument("--substeps", type=int, default=10)
    tst.add_argument("--start", choices=("data", "stationary"), default="data")
    tst.add_argument("--drift-fit", choices=("qmle", "mle"), default="qmle")
    tst.add_argument("--jobs", type=int, default=1)
    tst.add_argument("-o", "--output", default=None, help="report JSON path")
    tst.add_argument("--curves-prefix", default=None, help="write per-step curves CSV")
    tst.set_defaults(func=_cmd_test)

    study = sub.add_parser("study", help="Monte Carlo studies")
    study.add_argument("kind", choices=("rmse", "clt", "test-size", "test-power"))
    study.add_argument("--config", required=True, help="study config JSON")
    study.add_argument("--seed", type=int, default=None, help="override config seed")
    study.add_argument("--jobs", type=int, default=None, help="override config n_jobs")
    study.add_argument("-o", "--output", required=True, help="output path prefix")
    study.set_defaults(func=_cmd_study)

    stat = sub.add_parser("stationary", help="tabulate the stationary law to CSV")
    stat.add_argument("--model", required=True)
    stat.add_argument("-o", "--output", required=True)
    stat.set_defaults(func=_cmd_stationary)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, StatisticsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
