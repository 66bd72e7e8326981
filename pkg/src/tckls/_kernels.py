"""Jitted inner loops. Kept minimal: one Euler recursion used everywhere."""

import numpy as np
from numba import njit


@njit(cache=True)
def euler_path_kernel(x0, dts, noise, thresholds, a, b, sigma, gamma, reflect):
    """Euler recursion with per-step regime lookup.

    Coefficients are evaluated at the step's starting point; |.| reflection
    is applied only when `reflect` is set (nonnegative state space).  The
    float operations mirror `simulate.euler_step` exactly so that scalar and
    vector paths are bit-identical.
    """
    n = dts.shape[0]
    out = np.empty(n + 1)
    out[0] = x0
    x = x0
    for i in range(n):
        j = 0
        for k in range(thresholds.shape[0]):
            if x >= thresholds[k]:
                j = k + 1
        g = gamma[j]
        if g == 0.0:
            pw = 1.0
        elif g == 0.5:
            pw = np.sqrt(np.abs(x))
        elif g == 1.0:
            pw = np.abs(x)
        else:
            pw = np.abs(x) ** g
        x = x + (a[j] - b[j] * x) * dts[i] + sigma[j] * pw * np.sqrt(dts[i]) * noise[i]
        if reflect and x < 0.0:
            x = -x
        out[i + 1] = x
    return out
