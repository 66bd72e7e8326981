"""Desk-scale Monte Carlo studies.

A small replication study of estimator accuracy (relative RMSE, bias, CI
coverage) and the normality of the normalized errors.  The full-scale
settings from the acceptance suite take minutes; this trims horizons and
replicate counts to run in well under a minute.
"""

from tckls.mc_harness import StudyConfig, run_clt_study, run_rmse_study
from tckls.model import RegimeParams, ThresholdModel

model = ThresholdModel(
    regimes=(
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
        RegimeParams(a=0.0, b=0.0, sigma=0.4, gamma=0.0),
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
    ),
    thresholds=(1.0, 1.5),
)

cfg = StudyConfig(model=model, T=100.0, N=100_000, n_rep=40, seed=21, which="rmse")
rep = run_rmse_study(cfg)
print(f"RMSE study: {cfg.n_rep} replicates at T={cfg.T:g}, N={cfg.N} "
      f"({rep.runtime_s:.0f}s, {rep.n_failures} failures)")
print("sigma relative RMSE:", [round(c["rmse"], 4) for c in rep.tables["sigma"]])
for kind in ("mle", "qmle"):
    tbl = rep.tables[kind]
    note = ["" if c["relative"] else " (abs: true value 0)" for c in tbl["a"]]
    print(f"{kind}: a RMSE", [round(c["rmse"], 3) for c in tbl["a"]],
          "b RMSE", [round(c["rmse"], 3) for c in tbl["b"]], "".join(note))
    cov = rep.tables[f"{kind}_ci_coverage"]
    print(f"{kind}: 95% CI coverage a", cov["a"], "b", cov["b"])

cfg = StudyConfig(model=model, T=100.0, N=100_000, n_rep=40, seed=22, which="clt")
rep = run_clt_study(cfg)
print(f"\nCLT study ({rep.runtime_s:.0f}s): normalized errors vs N(0,1)")
for kind in ("mle", "qmle"):
    rows = rep.tables[kind]["a"]
    print(f"{kind}: KS distance per regime (a):", [round(r["ks"], 3) for r in rows],
          " mean:", [round(r["mean"], 2) for r in rows])
