"""Exact mode-by-mode solution of the linearized forward-backward system.

Each Fourier mode obeys U' = M U with U = (w_hat, mu_hat), mu_hat(0) given
and w_hat(T) given.  Because M^2 = sigma I the propagator is
cosh(rho t) I + sinh(rho t)/rho M.  That form is only used for rho T <= 1:
propagating w(0) forward through cosh(rho T) cancels catastrophically
once rho T is large.  Otherwise the solution is assembled from decaying
exponentials only, using the eigendirections of M, so nothing overflows
and both boundary values are met to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fitting import exp_decay_rate
from .spectral import (
    GapClosedError,
    GridField,
    ModeMatrix,
    ModelParams,
    _as_freq,
    critical_coupling,
    mode_matrix,
    spectral_gap,
    wavenumber_sq,
)

SPLIT_THRESHOLD = 1.0
FIT_WINDOW = (0.2, 0.5)
COND_LIMIT = 1e12


class EllipticModeError(ValueError):
    """sigma_xi < 0: the mode oscillates and the boundary problem is not treated."""


def transfer_matrix(mode: ModeMatrix, t: float) -> np.ndarray:
    """exp(t M) from the closed form; I + t M in the nilpotent case."""
    M = mode.matrix
    regime = mode.regime()
    if regime == "elliptic":
        raise EllipticModeError("elliptic mode: sigma < 0")
    if regime == "nilpotent":
        return np.eye(2) + t * M
    rho = math.sqrt(mode.sigma)
    return math.cosh(rho * t) * np.eye(2) + (math.sinh(rho * t) / rho) * M


@dataclass(frozen=True)
class ModeBvpData:
    xi: tuple[int, ...]
    mu0: complex
    gT: complex
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not any(_as_freq(self.xi)):
            raise ValueError("the zero mode is excluded")


@dataclass(frozen=True)
class ModeTrajectory:
    times: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    rho: float
    condition: float


def _solve_modes(k, sigma, nu, gk, mu0, gT, T, times):
    """Vectorized BVP solve over modes.

    k, sigma, gk (= gamma K_hat), mu0, gT are 1-d arrays over modes; returns
    (w, mu, cond) with w, mu of shape (modes, times).
    """
    k = np.asarray(k, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gk = np.asarray(gk, dtype=float)
    mu0 = np.asarray(mu0, dtype=complex)
    gT = np.asarray(gT, dtype=complex)
    times = np.asarray(times, dtype=float)
    rho = np.sqrt(sigma)
    a11, a12, a21, a22 = nu * k, -gk, -k, -nu * k
    w = np.empty((k.size, times.size), dtype=complex)
    mu = np.empty_like(w)
    cond = np.empty(k.size)

    short = rho * T <= SPLIT_THRESHOLD
    if np.any(short):
        r = rho[short][:, None]
        ch = np.cosh(r * T)[:, 0]
        sh = (np.sinh(r * T) / r)[:, 0]
        # row of exp(TM) that produces w(T)
        e00 = ch + sh * a11[short]
        e01 = sh * a12[short]
        # boundary rows acting on U(0) = (w0, mu0): mu(0) and w(T)
        # the w(T) row is rescaled to unit size; this leaves the solution unchanged
        scale = np.maximum(np.abs(e00), np.abs(e01))
        A = np.zeros((r.size, 2, 2))
        A[:, 0, 1] = 1.0
        A[:, 1, 0] = e00 / scale
        A[:, 1, 1] = e01 / scale
        rhs = np.stack([mu0[short], gT[short] / scale], axis=-1)
        U0 = np.linalg.solve(A.astype(complex), rhs[..., None])[..., 0]
        cond[short] = np.linalg.cond(A)
        w0 = U0[:, 0]
        m0 = mu0[short]
        cht = np.cosh(r * times)
        sht = np.sinh(r * times) / r
        w[short] = cht * w0[:, None] + sht * (a11[short][:, None] * w0[:, None] + a12[short][:, None] * m0[:, None])
        mu[short] = cht * m0[:, None] + sht * (a21[short][:, None] * w0[:, None] + a22[short][:, None] * m0[:, None])

    long_ = ~short
    if np.any(long_):
        kk, rr, nk = k[long_], rho[long_], nu * k[long_]
        # eigenvectors (w, mu) of M for eigenvalues -rho (decays forward) and +rho
        em_w, ep_w = -(nk - rr) / kk, -(nk + rr) / kk
        decay = np.exp(-rr * T)
        # c_m * e_minus * exp(-rho t) + c_p * e_plus * exp(-rho (T - t))
        A = np.empty((kk.size, 2, 2))
        A[:, 0, 0] = 1.0
        A[:, 0, 1] = decay
        A[:, 1, 0] = em_w * decay
        A[:, 1, 1] = ep_w
        rhs = np.stack([mu0[long_], gT[long_]], axis=-1)
        coef = np.linalg.solve(A.astype(complex), rhs[..., None])[..., 0]
        cond[long_] = np.linalg.cond(A)
        left = np.exp(-rr[:, None] * times[None, :])
        right = np.exp(-rr[:, None] * (T - times[None, :]))
        cm, cp = coef[:, 0][:, None], coef[:, 1][:, None]
        mu[long_] = cm * left + cp * right
        w[long_] = cm * em_w[:, None] * left + cp * ep_w[:, None] * right
    return w, mu, cond


def solve_mode_bvp(params: ModelParams, data: ModeBvpData, times=None) -> ModeTrajectory:
    """Unique solution of U' = M U with mu(0) = data.mu0 and w(T) = data.gT."""
    mode = mode_matrix(params, data.xi)
    if mode.sigma <= 0:
        raise EllipticModeError(f"mode {data.xi} has sigma = {mode.sigma:.6g} <= 0")
    if times is None:
        times = np.linspace(0.0, data.T, 201)
    xi = _as_freq(data.xi, params.kernel.dim)
    k = wavenumber_sq(xi)
    gk = params.gamma * params.kernel.khat(xi)
    w, mu, cond = _solve_modes([k], [mode.sigma], params.nu, [gk], [data.mu0], [data.gT], data.T, times)
    if not cond[0] < COND_LIMIT:
        raise np.linalg.LinAlgError(f"boundary system is near-singular (condition {cond[0]:.3e})")
    return ModeTrajectory(np.asarray(times, dtype=float), w[0], mu[0], math.sqrt(mode.sigma), float(cond[0]))


@dataclass(frozen=True)
class LinearEnvelope:
    times: np.ndarray
    h_minus1_m: np.ndarray
    l2_grad_phi: np.ndarray
    fitted_rate: float | None
    rho_gamma: float
    mu_hat: np.ndarray
    w_hat: np.ndarray

    @property
    def ratio(self) -> float | None:
        return None if self.fitted_rate is None else self.fitted_rate / self.rho_gamma

    @property
    def energy(self) -> np.ndarray:
        return self.h_minus1_m**2 + self.l2_grad_phi**2

    def summary(self) -> dict:
        return {"fitted_rate": self.fitted_rate, "rho_gamma": self.rho_gamma, "ratio": self.ratio}

    def csv_rows(self) -> list[dict]:
        return [
            {"t": t, "h_minus1_m": h, "l2_grad_phi": g}
            for t, h, g in zip(self.times, self.h_minus1_m, self.l2_grad_phi)
        ]


def linear_turnpike_envelope(
    params: ModelParams, m0: GridField, g: GridField, T: float, times=None
) -> LinearEnvelope:
    """Solve every resolved mode and assemble the H^-1 / L^2 time series.

    The terminal mean of g is removed; the fitted rate is the least-squares
    exponential rate of ||m(t) - 1||_{H^-1} on [0.2 T, 0.5 T], or None when
    the deviation vanishes identically.
    """
    gc, _ = critical_coupling(params.nu, params.kernel)
    if params.gamma >= gc:
        raise GapClosedError("gap closed: gamma >= gamma_c")
    if m0.n != g.n or m0.dim != g.dim:
        raise ValueError("m0 and g must live on the same grid")
    if times is None:
        times = np.linspace(0.0, T, 201)
    times = np.asarray(times, dtype=float)
    grid = m0.grid
    sym = grid.symbol(params.kernel)
    mu0_hat = (m0.values - 1.0).astype(float)
    mu0_hat = grid.fft(mu0_hat)
    g_hat = grid.fft(g.values - g.values.mean())
    nz = grid.nonzero
    k = grid.k[nz]
    gk = params.gamma * sym[nz]
    sigma = params.nu**2 * k**2 + k * gk
    w_nz, mu_nz, _ = _solve_modes(k, sigma, params.nu, gk, mu0_hat[nz], g_hat[nz], T, times)
    h = np.sqrt(np.sum(np.abs(mu_nz) ** 2 / k[:, None], axis=0))
    grad = np.sqrt(np.sum(k[:, None] * np.abs(w_nz) ** 2, axis=0))
    rho = spectral_gap(params, max(grid.n // 2, params.kernel.cutoff))
    rate = None
    if np.max(h) > 0:
        rate = exp_decay_rate(times, h, (FIT_WINDOW[0] * T, FIT_WINDOW[1] * T))
    shape = (times.size,) + nz.shape
    mu_full = np.zeros(shape, dtype=complex)
    w_full = np.zeros(shape, dtype=complex)
    mu_full[:, nz] = mu_nz.T
    w_full[:, nz] = w_nz.T
    return LinearEnvelope(times, h, grad, rate, rho, mu_full, w_full)
