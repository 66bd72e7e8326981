"""Simulating threshold CKLS trajectories.

One path of the three-regime benchmark model, warm-started from the
stationary law, then subsampled to a daily-style observation grid.
"""

import numpy as np

from tckls.model import RegimeParams, ThresholdModel
from tckls.simulate import simulate_path, subsample, warm_start, write_trajectory_csv

model = ThresholdModel(
    regimes=(
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
        RegimeParams(a=0.0, b=0.0, sigma=0.4, gamma=0.0),
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
    ),
    thresholds=(1.0, 1.5),
)

rng = np.random.default_rng(7)
x0 = warm_start(model, rng, method="exact-mu")
print(f"stationary draw x0 = {x0:.4f}")

traj = simulate_path(model, x0, n_per_unit=1000, T=100.0, rng=rng)
print(f"path: {traj.times.size} points on [0, {traj.horizon:g}], "
      f"range [{traj.values.min():.4f}, {traj.values.max():.4f}]")

# time spent per regime (half-open intervals [r_j, r_{j+1}))
for j, (lo, hi) in enumerate([(0.0, 1.0), (1.0, 1.5), (1.5, np.inf)]):
    frac = np.mean((traj.values >= lo) & (traj.values < hi))
    print(f"  regime {j}: {100 * frac:.1f}% of the time")

obs = subsample(traj, stride=50)
print(f"subsampled to {obs.times.size} observations, max gap {obs.max_gap:g}")

write_trajectory_csv(traj, "path.csv")
print("wrote path.csv")
