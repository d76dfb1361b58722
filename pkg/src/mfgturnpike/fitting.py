"""Least-squares fits shared by the experiment drivers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    max_abs_residual: float
    n: int


def line_fit(x, y) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a line fit")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    if x.size > 2:
        s2 = float(resid @ resid) / (x.size - 2)
        cov = s2 * np.linalg.inv(A.T @ A)
        se = float(np.sqrt(cov[0, 0]))
    else:
        se = 0.0
    return LineFit(float(coef[0]), float(coef[1]), se, float(np.max(np.abs(resid))), int(x.size))


def exp_decay_rate(t, y, window: tuple[float, float]) -> float:
    """Rate r of y ~ C exp(-r t) fitted on t in [window[0], window[1]]."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12) & (y > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three usable samples in the fit window")
    return -line_fit(t[sel], np.log(y[sel])).slope


def loglog_slope(x, y) -> LineFit:
    return line_fit(np.log(np.asarray(x, dtype=float)), np.log(np.abs(np.asarray(y, dtype=float))))
