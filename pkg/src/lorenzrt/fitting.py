"""Log-linear fits of exponentially decaying sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class TailFit:
    """tail(n) ~ c * exp(-rate * n) fitted on n_range."""
    c: float
    rate: float
    r2: float
    n_range: tuple
    n_points: int = 0
    ok: bool = True
    message: str = ""

    @property
    def passed(self):
        return self.ok and self.rate > 0

    def predict(self, n):
        return self.c * np.exp(-self.rate * np.asarray(n, dtype=float))


def fit_exponential(ns, values, n_range=None, min_points=5):
    """Least-squares fit of log(values) against n.

    Non-positive values are dropped.  Fewer than ``min_points`` usable points
    gives a failed fit (ok=False) rather than an exception.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if n_range is not None:
        keep = (ns >= n_range[0]) & (ns <= n_range[1])
        ns, values = ns[keep], values[keep]
    pos = np.isfinite(values) & (values > 0)
    ns, values = ns[pos], values[pos]
    rng = (int(n_range[0]), int(n_range[1])) if n_range is not None else (
        (int(ns.min()), int(ns.max())) if ns.size else (0, 0))
    if np.unique(ns).size < min_points:
        return TailFit(math.nan, math.nan, math.nan, rng, int(ns.size), False,
                       f"only {np.unique(ns).size} usable points")
    y = np.log(values)
    if np.ptp(y) == 0:
        slope, intercept = 0.0, float(y[0])  # flat: no decay, not a rounding-level slope
    else:
        slope, intercept = np.polyfit(ns, y, 1)
    resid = y - (slope * ns + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    # a perfectly flat series has no variance to explain
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return TailFit(float(math.exp(intercept)), float(-slope), float(r2), rng, int(ns.size))
