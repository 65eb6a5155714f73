"""Least-squares rate fits on log-log scale."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateFit:
    pairs: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r2: float

    def to_dict(self):
        return {"pairs": [list(p) for p in self.pairs], "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2}


def fit_rate(results) -> RateFit:
    """Fit ``log r = intercept + slope log N`` by least squares.

    Examples
    --------
    >>> round(fit_rate([(1, 2.0), (2, 1.0), (4, 0.5)]).slope, 12)
    -1.0
    """
    pairs = tuple((float(n), float(r)) for n, r in results)
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 points, got {len(pairs)}")
    N = np.array([p[0] for p in pairs])
    r = np.array([p[1] for p in pairs])
    if np.any(N <= 0):
        raise ValueError("iteration counts must be positive")
    if np.any(~(r > 0)):
        raise ValueError("residuals must be positive")
    x, y = np.log(N), np.log(r)
    slope, intercept = np.polyfit(x, y, 1)
    pred = intercept + slope * x
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(pairs, float(slope), float(intercept), r2)
