"""Standard monocular depth-evaluation metrics.

    AbsRel = mean |p - g| / g
    SqRel  = mean (p - g)^2 / g
    RMSE   = sqrt(mean (p - g)^2)
    log10  = mean |log10 p - log10 g|
    SILog  = 100 * sqrt(mean e^2 - (mean e)^2),  e = ln p - ln g
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

FORMULAS = [line.strip() for line in __doc__.strip().splitlines()[2:]]
FIELDS = ("silog", "abs_rel", "sq_rel", "log10", "rmse")


class NoData(ValueError):
    pass


@dataclass(frozen=True)
class DepthMetrics:
    silog: float
    abs_rel: float
    sq_rel: float
    log10: float
    rmse: float

    def as_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred, gt, mask=None) -> DepthMetrics:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    m = np.ones(p.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    p, g = p[m], g[m]
    if p.size == 0:
        raise NoData("evaluation mask is empty")
    if not (np.all(p > 0) and np.all(g > 0)):
        raise ValueError("depths in the evaluation mask must be positive")
    d = p - g
    e = np.log(p) - np.log(g)
    # two-pass variance; the one-pass form cancels catastrophically for constant e
    var = float(np.mean((e - e.mean()) ** 2))
    return DepthMetrics(
        silog=100.0 * float(np.sqrt(var)),
        abs_rel=float(np.mean(np.abs(d) / g)),
        sq_rel=float(np.mean(d * d / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse=float(np.sqrt(np.mean(d * d))),
    )
