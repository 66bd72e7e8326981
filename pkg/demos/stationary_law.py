"""Stationary laws of threshold CKLS models.

Builds the invariant distribution for a plain CIR, a plain OU and a
three-regime model, checks the closed-form special cases, and exports the
tabulated law for plotting.
"""

import math

from tckls.model import RegimeParams, ThresholdModel
from tckls.stationary import build_stationary, export_density_csv, stationary_moment

cir = ThresholdModel(regimes=(RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),))
ou = ThresholdModel(regimes=(RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.0),))
three = ThresholdModel(
    regimes=(
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
        RegimeParams(a=0.0, b=0.0, sigma=0.4, gamma=0.0),
        RegimeParams(a=0.3, b=0.2, sigma=0.2, gamma=0.5),
    ),
    thresholds=(1.0, 1.5),
)

# The CIR invariant law is Gamma(2a/sigma^2, rate 2b/sigma^2): mean 1.5,
# second moment 2.4.  The OU one is Normal(a/b, sigma^2/(2b)).
dist = build_stationary(cir)
print("CIR:   mean", round(stationary_moment(dist, 1.0), 6), " E[X^2]", round(stationary_moment(dist, 2.0), 6))
print("       E[1/X]", round(stationary_moment(dist, -1.0), 6), "(Gamma oracle: 10/14 =", round(10 / 14, 6), ")")
print("       E[X^-16] is", stationary_moment(dist, -16.0), "(needs a0 > 8 sigma0^2)")

dist = build_stationary(ou)
m1 = stationary_moment(dist, 1.0)
print("OU:    mean", round(m1, 6), " var", round(stationary_moment(dist, 2.0) - m1 * m1, 6))

dist = build_stationary(three)
print("3-regime: total mass", round(stationary_moment(dist, 0.0), 10))
for j in range(3):
    print(f"   regime {j}: occupation {stationary_moment(dist, 0.0, regime=j):.4f}, "
          f"contribution to mean {stationary_moment(dist, 1.0, regime=j):.4f}")

export_density_csv(dist, "three_regime_law.csv")
print("wrote three_regime_law.csv (columns x,density,cdf)")
