"""Deterministic fan-out helper.

Work items carry their own seed material, results are collected by index,
and every reduction downstream is order-independent, so the outcome is
byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor


def deterministic_map(fn, payloads, n_jobs: int = 1) -> list:
    payloads = list(payloads)
    if n_jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    chunksize = max(1, math.ceil(len(payloads) / (4 * n_jobs)))
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, payloads, chunksize=chunksize))
