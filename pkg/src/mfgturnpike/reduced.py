"""Reduced critical amplitude dynamics a' = -beta a^3 + C0 a^5.

The pure cubic flow has the closed form a(t) = a0 / sqrt(1 + 2 beta a0^2 t),
so a^-2 grows linearly at rate 2 beta and the midpoint value a(T/2) decays
like T^(-1/2) once beta a0^2 T >> 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fitting import line_fit, loglog_slope


@dataclass(frozen=True)
class ReducedModel:
    beta: float
    quintic_bound: float = 0.0
    a_star: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.quintic_bound < 0:
            raise ValueError("quintic bound must be nonnegative")
        if not self.a_star > 0:
            raise ValueError("a_star must be positive")

    def rhs(self, a: float) -> float:
        return -self.beta * a**3 + self.quintic_bound * a**5

    def closed_form(self, a0: float, t):
        """Exact pure-cubic solution; the quintic term is ignored."""
        t = np.asarray(t, dtype=float)
        return a0 / np.sqrt(1.0 + 2.0 * self.beta * a0 * a0 * t)


@dataclass(frozen=True)
class ReducedTrajectory:
    times: np.ndarray
    a: np.ndarray
    within_radius: bool
    closed_form: np.ndarray | None

    def max_relative_error(self) -> float:
        if self.closed_form is None:
            raise ValueError("no closed form for a model with a quintic term")
        scale = np.maximum(np.abs(self.closed_form), 1e-300)
        return float(np.max(np.abs(self.a - self.closed_form) / scale))


def integrate_reduced(model: ReducedModel, a0: float, T: float, dt: float = 1e-3,
                      sample_every: int = 1) -> ReducedTrajectory:
    """Classical RK4 with fixed step dt (the last step is shortened to land on T).

    Integration stops at the first step that leaves |a| <= a_star.
    """
    if abs(a0) > model.a_star:
        raise ValueError("initial amplitude exceeds the validity radius a_star")
    steps = int(math.ceil(T / dt - 1e-9))
    f = model.rhs
    ts, vals = [0.0], [a0]
    a, t = float(a0), 0.0
    inside = True
    for n in range(steps):
        h = min(dt, T - t)
        k1 = f(a)
        k2 = f(a + 0.5 * h * k1)
        k3 = f(a + 0.5 * h * k2)
        k4 = f(a + h * k3)
        a += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        t = T if n == steps - 1 else (n + 1) * dt
        inside = abs(a) <= model.a_star
        if (n + 1) % sample_every == 0 or n == steps - 1 or not inside:
            ts.append(t)
            vals.append(a)
        if not inside:
            # the normal form is meaningless beyond a_star; stop at the exit
            break
    times = np.array(ts)
    closed = model.closed_form(a0, times) if model.quintic_bound == 0 else None
    return ReducedTrajectory(times, np.array(vals), inside, closed)


@dataclass(frozen=True)
class InverseSquareFit:
    slope: float
    slope_stderr: float
    intercept: float

    @property
    def band(self) -> tuple[float, float]:
        """95% normal confidence band for the slope."""
        return (self.slope - 1.96 * self.slope_stderr, self.slope + 1.96 * self.slope_stderr)


def inverse_square_law_check(traj: ReducedTrajectory) -> InverseSquareFit:
    """Linear fit of a^-2 against t; the pure cubic gives slope 2 beta."""
    if np.min(np.abs(traj.a)) < 1e-8:
        raise ValueError("trajectory too close to zero for the a^-2 fit")
    fit = line_fit(traj.times, traj.a**-2.0)
    return InverseSquareFit(fit.slope, fit.slope_stderr, fit.intercept)


@dataclass
class MidpointScaling:
    T: np.ndarray
    a_mid: np.ndarray
    closed_form_a_mid: np.ndarray | None
    exponent: float
    raw_slope: float
    prefactor: float

    def csv_rows(self) -> list[dict]:
        cf = self.closed_form_a_mid
        return [
            {"T": T, "a_mid": a, "closed_form_a_mid": "" if cf is None else cf[i]}
            for i, (T, a) in enumerate(zip(self.T, self.a_mid))
        ]

    def summary(self) -> dict:
        return {"exponent": self.exponent, "raw_loglog_slope": self.raw_slope, "prefactor": self.prefactor}


def midpoint_scaling(model: ReducedModel, a0: float, T_list, dt: float = 1e-3) -> MidpointScaling:
    """|a(T/2)| for each T and the algebraic decay exponent.

    The exponent is read off the growth of a(T/2)^-2 - a0^-2, which removes
    the initial offset that otherwise bends the log-log plot at moderate T;
    the plain log|a(T/2)| vs log T slope is reported alongside.  The
    prefactor is sqrt(T) |a(T/2)| at the largest T (tends to 1/sqrt(beta)).
    """
    T = np.asarray(sorted(float(v) for v in T_list))
    if T.size < 2 or T[-1] / T[0] < 100 * (1 - 1e-12):
        raise ValueError("T_list must span at least two decades")
    half = T / 2
    steps = np.rint(half / dt).astype(int)
    if np.any(np.abs(steps * dt - half) > 1e-9 * half):
        raise ValueError("each T/2 must be a multiple of dt")
    traj = integrate_reduced(model, a0, float(half[-1]), dt)
    if not traj.within_radius:
        raise ValueError("amplitude left the validity radius before the largest T/2")
    a_mid = np.abs(traj.a[steps])
    growth = a_mid**-2.0 - a0**-2.0
    exponent = -0.5 * loglog_slope(T, growth).slope
    raw = loglog_slope(T, a_mid).slope
    cf = model.closed_form(a0, half) if model.quintic_bound == 0 else None
    return MidpointScaling(T, a_mid, cf, exponent, raw, float(math.sqrt(T[-1]) * a_mid[-1]))
