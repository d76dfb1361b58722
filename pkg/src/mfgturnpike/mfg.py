"""Finite-horizon MFG solver on a periodic pseudospectral grid.

The HJB equation is swept backward from phi(T) = g, the Fokker-Planck
equation forward from m(0) = m0, and the density trajectory is updated by a
damped fixed-point iteration (optionally Anderson-accelerated).  Diffusion
and the linear couplings are integrated with Crank-Nicolson / trapezoidal
weights (``scheme="cn"``) or backward Euler (``scheme="euler"``); the
quadratic terms 1/2|grad phi|^2 and div(mu grad phi) are explicit and
dealiased with the two-thirds rule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import NoConvergence, newton_krylov
from scipy.sparse.linalg import LinearOperator

from .fitting import exp_decay_rate, line_fit, loglog_slope
from .spectral import (
    GridField,
    KernelSpec,
    ModelParams,
    SpectralGrid,
    critical_coupling,
    critical_mode,
    spectral_gap,
    spectral_grid,
    wavenumber_sq,
)

log = logging.getLogger(__name__)

SCHEMES = ("cn", "euler")
METHODS = ("picard", "newton")
FIT_WINDOW = (0.2, 0.5)


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


class PositivityError(SolverError):
    pass


@dataclass(frozen=True)
class MfgProblem:
    params: ModelParams
    m0: GridField
    g: GridField
    T: float
    nt: int

    def __post_init__(self):
        if self.m0.kind != "density":
            raise ValueError("m0 must be a density-tagged field")
        if (self.g.n, self.g.dim) != (self.m0.n, self.m0.dim):
            raise ValueError("m0 and g must share a grid")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.nt < 16:
            raise ValueError("nt must be at least 16")
        if self.nx < 4 * self.params.kernel.cutoff:
            raise ValueError("nx must be at least 4 times the kernel cutoff")

    @property
    def nx(self) -> int:
        return self.m0.n

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@dataclass(frozen=True)
class SolverOptions:
    omega: float = 0.5
    tol: float = 1e-10
    max_iter: int = 500
    scheme: str = "cn"
    anderson: int = 5
    min_omega: float = 1.0 / 64
    method: str = "picard"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")


@dataclass
class MfgTrajectory:
    times: np.ndarray
    m: np.ndarray
    phi: np.ndarray
    h_minus1: np.ndarray
    l2_grad: np.ndarray
    mass: np.ndarray
    min_m: np.ndarray
    a_crit: np.ndarray | None
    iterations: int
    residual: float
    residuals: list[float] = field(default_factory=list)

    @property
    def energy(self) -> np.ndarray:
        return self.h_minus1**2 + self.l2_grad**2

    def field_at(self, j: int) -> tuple[GridField, GridField]:
        return GridField(self.m[j]), GridField(self.phi[j])

    def csv_rows(self) -> list[dict]:
        rows = []
        for j, t in enumerate(self.times):
            rows.append(
                {
                    "t": t,
                    "h_minus1": self.h_minus1[j],
                    "l2_grad": self.l2_grad[j],
                    "mass": self.mass[j],
                    "min_m": self.min_m[j],
                    "a_crit": "" if self.a_crit is None else self.a_crit[j],
                }
            )
        return rows


# ---------------------------------------------------------------------------
# single time steps on spectra


def _hamiltonian_hat(grid: SpectralGrid, phi_hat: np.ndarray) -> np.ndarray:
    out = np.zeros_like(phi_hat)
    for d in grid.grad(phi_hat):
        out += grid.product(d, d)
    return 0.5 * out


def _transport_hat(grid: SpectralGrid, mu_hat: np.ndarray, phi_hat: np.ndarray) -> np.ndarray:
    """Spectrum of div(mu grad phi), dealiased."""
    out = np.zeros_like(mu_hat)
    for ik, d in zip(grid.ik, grid.grad(phi_hat)):
        out += ik * grid.product(mu_hat, d)
    return out


def _hjb_step_hat(grid, sym, params, phi_next, m_now, m_next, dt, scheme):
    a = dt * params.nu * grid.k
    H = _hamiltonian_hat(grid, phi_next)
    if scheme == "cn":
        src = params.gamma * sym * 0.5 * (m_now + m_next)
        return ((1 - 0.5 * a) * phi_next + dt * (src - H)) / (1 + 0.5 * a)
    src = params.gamma * sym * m_now
    return (phi_next + dt * (src - H)) / (1 + a)


def _fp_step_hat(grid, params, m_prev, phi_now, phi_next, dt, scheme):
    a = dt * params.nu * grid.k
    mu = m_prev.copy()
    mu[(0,) * grid.dim] = 0.0
    if scheme == "cn":
        phi_mid = 0.5 * (phi_now + phi_next)
        lin = -grid.k * phi_mid
        rhs = (1 - 0.5 * a) * m_prev + dt * (lin + _transport_hat(grid, mu, phi_mid))
        return rhs / (1 + 0.5 * a)
    lin = -grid.k * phi_next
    return (m_prev + dt * (lin + _transport_hat(grid, mu, phi_next))) / (1 + a)


def hjb_backward_step(
    phi_next: GridField, m_slice: GridField, dt: float, params: ModelParams,
    scheme: str = "euler", m_next: GridField | None = None,
) -> GridField:
    """One backward step of -phi_t - nu Lap phi + 1/2 |grad phi|^2 = gamma K*m.

    With ``scheme="euler"`` the diffusion is divided by (1 + dt nu k) and the
    source uses ``m_slice``; with ``"cn"`` the source is averaged with
    ``m_next`` (defaulting to ``m_slice``).
    """
    grid = phi_next.grid
    sym = grid.symbol(params.kernel)
    m_next = m_slice if m_next is None else m_next
    out = _hjb_step_hat(grid, sym, params, phi_next.spectrum, m_slice.spectrum, m_next.spectrum, dt, scheme)
    vals = grid.ifft(out)
    if not np.all(np.isfinite(vals)):
        raise SolverError("HJB step produced non-finite values")
    return GridField(vals)


def fp_forward_step(
    m_prev: GridField, phi_slice: GridField, dt: float, params: ModelParams,
    scheme: str = "euler", phi_next: GridField | None = None,
) -> GridField:
    """One forward step of m_t - nu Lap m - div(m grad phi) = 0.

    The zero Fourier mode of both the Laplacian and the divergence vanishes,
    so the mass is carried over exactly.
    """
    grid = m_prev.grid
    phi_next = phi_slice if phi_next is None else phi_next
    out = _fp_step_hat(grid, params, m_prev.spectrum, phi_slice.spectrum, phi_next.spectrum, dt, scheme)
    out[(0,) * grid.dim] = m_prev.spectrum[(0,) * grid.dim]
    vals = grid.ifft(out)
    if not np.all(np.isfinite(vals)):
        raise SolverError("FP step produced non-finite values")
    if vals.min() <= 0:
        log.warning("FP step lost positivity (min m = %.3e)", vals.min())
        return GridField(vals)
    return GridField(vals, "density" if abs(vals.mean() - 1) <= 1e-12 else None)


# ---------------------------------------------------------------------------
# sweeps and the fixed-point iteration


DENSE_DFT_MAX = 256


class _DenseOps:
    """Same product/grad interface as SpectralGrid, with dense DFT matrices.

    On small grids the per-call overhead of the FFT wrappers dominates the
    time loop; a pair of small matrix products is several times faster.
    """

    def __init__(self, grid: SpectralGrid):
        self.dim, self.n, self.k, self.ik = grid.dim, grid.n, grid.k, grid.ik
        self.nonzero, self.nyquist = grid.nonzero, grid.nyquist
        size = grid.n**grid.dim
        eye = np.eye(size).reshape((size,) + grid.k.shape)
        axes = tuple(range(1, grid.dim + 1))
        # forward[j, i]: coefficient j of the unit field at point i
        self.forward = (np.fft.fftn(eye, axes=axes) / size).reshape(size, size).T.copy()
        self.mask = grid.dealias.ravel().astype(float)
        inverse = np.linalg.inv(self.forward)
        self.inverse = inverse * self.mask[None, :]
        self.forward_masked = self.forward * self.mask[:, None]
        self.grad_mult = [np.where(grid.nyquist, 0, ik) for ik in grid.ik]
        self.shape = grid.k.shape

    def product(self, a_hat, b_hat):
        a = (self.inverse @ a_hat.ravel()).real
        b = (self.inverse @ b_hat.ravel()).real
        return (self.forward_masked @ (a * b)).reshape(self.shape)

    def grad(self, f_hat):
        return [g * f_hat for g in self.grad_mult]


class _Sweeper:
    def __init__(self, problem: MfgProblem, scheme: str):
        self.problem = problem
        self.grid = spectral_grid(problem.m0.dim, problem.nx)
        self.ops = _DenseOps(self.grid) if problem.nx**problem.m0.dim <= DENSE_DFT_MAX else self.grid
        self.sym = self.grid.symbol(problem.params.kernel)
        self.scheme = scheme
        self.zero = (0,) * self.grid.dim
        self.m0_hat = problem.m0.spectrum.copy()
        self.g_hat = problem.g.spectrum.copy()

    def hjb(self, m_hat: np.ndarray) -> np.ndarray:
        p, dt, nt = self.problem.params, self.problem.dt, self.problem.nt
        phi = np.empty_like(m_hat)
        phi[nt] = self.g_hat
        for n in range(nt - 1, -1, -1):
            phi[n] = _hjb_step_hat(self.ops, self.sym, p, phi[n + 1], m_hat[n], m_hat[n + 1], dt, self.scheme)
            phi[n][self.zero] = 0.0
        if not np.all(np.isfinite(phi)):
            raise SolverError("HJB sweep produced non-finite values")
        return phi

    def fp(self, phi_hat: np.ndarray) -> np.ndarray:
        p, dt, nt = self.problem.params, self.problem.dt, self.problem.nt
        m = np.empty_like(phi_hat)
        m[0] = self.m0_hat
        for n in range(nt):
            m[n + 1] = _fp_step_hat(self.ops, p, m[n], phi_hat[n], phi_hat[n + 1], dt, self.scheme)
            m[n + 1][self.zero] = self.m0_hat[self.zero]
        if not np.all(np.isfinite(m)):
            raise SolverError("FP sweep produced non-finite values")
        return m

    def apply(self, m_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phi = self.hjb(m_hat)
        return phi, self.fp(phi)


def _slice_l2(diff_hat: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, diff_hat.ndim))
    return np.sqrt(np.sum(np.abs(diff_hat) ** 2, axis=axes))


def solve_mfg(problem: MfgProblem, opts: SolverOptions | None = None, m_init: np.ndarray | None = None) -> MfgTrajectory:
    """Damped fixed-point iteration m -> phi -> m until sup_j ||m_new - m||_L2 <= tol.

    ``opts.method="newton"`` instead solves G(m) - m = 0 by Newton-Krylov,
    preconditioned with the exact inverse of the discrete linearization at
    the uniform state; this is the practical choice at gamma = gamma_c where
    the fixed-point map has no contraction margin on the critical mode.

    ``opts.anderson`` > 0 mixes the last few iterates (Anderson type II) on
    top of the damping; 0 gives the plain damped Picard iteration.  The
    damping is halved and the mixing history dropped whenever the residual
    grows.
    """
    opts = opts or SolverOptions()
    sw = _Sweeper(problem, opts.scheme)
    shape = (problem.nt + 1,) + (problem.nx,) * problem.m0.dim
    if m_init is None:
        x = np.broadcast_to(sw.m0_hat, shape).copy()
    else:
        x = np.asarray(m_init, dtype=complex).copy()
    if opts.method == "newton":
        return _solve_newton(problem, sw, x, opts)

    omega = opts.omega
    residuals: list[float] = []
    dX: list[np.ndarray] = []
    dF: list[np.ndarray] = []
    x_prev = f_prev = None
    best = math.inf
    for it in range(1, opts.max_iter + 1):
        phi, m_new = sw.apply(x)
        f = m_new - x
        res = float(np.max(_slice_l2(f)))
        residuals.append(res)
        log.debug("iteration %d residual %.3e omega %.3g", it, res, omega)
        if res <= opts.tol:
            return _finalize(problem, sw, m_new, phi, it, res, residuals)
        if not math.isfinite(res):
            raise ConvergenceError("fixed-point iteration diverged", residuals)
        if res > best * 1.0001 and it > 1:
            omega = max(0.5 * omega, opts.min_omega)
            dX.clear()
            dF.clear()
            x_prev = f_prev = None
        best = min(best, res)
        if opts.anderson > 0 and x_prev is not None:
            dX.append(x - x_prev)
            dF.append(f - f_prev)
            if len(dX) > opts.anderson:
                dX.pop(0)
                dF.pop(0)
        x_prev, f_prev = x, f
        step = omega * f
        if dX:
            Fm = np.stack([d.ravel() for d in dF], axis=1)
            Xm = np.stack([d.ravel() for d in dX], axis=1)
            Fr = np.concatenate([Fm.real, Fm.imag])
            fr = np.concatenate([f.ravel().real, f.ravel().imag])
            coef, *_ = np.linalg.lstsq(Fr, fr, rcond=None)
            corr = (Xm + omega * Fm) @ coef
            x = x + step - corr.reshape(x.shape)
        else:
            x = x + step
        x[(slice(None),) + sw.zero] = sw.m0_hat[sw.zero]
        x[0] = sw.m0_hat
    raise ConvergenceError(
        f"no convergence after {opts.max_iter} iterations (residual {residuals[-1]:.3e})", residuals
    )


class _LinearizedInverse:
    """Exact inverse of I - L, L the discrete linearization of the sweep map at m = 1.

    Per Fourier mode the linearized backward/forward steps form a banded
    system in time for the unknowns (psi_0, delta_1, psi_1, ..., delta_nt);
    modes sharing (k, gamma K_hat) share one banded matrix.
    """

    def __init__(self, sw: _Sweeper):
        grid, prob = sw.grid, sw.problem
        self.nt = nt = prob.nt
        self.theta = theta = 0.5 if sw.scheme == "cn" else 1.0
        self.groups: dict[tuple[float, float], list[tuple[int, ...]]] = {}
        for idx in zip(*np.nonzero(grid.nonzero)):
            key = (float(grid.k[idx]), float(prob.params.gamma * sw.sym[idx]))
            self.groups.setdefault(key, []).append(idx)
        dt, nu = prob.dt, prob.params.nu
        self.bands = {}
        n = np.arange(nt)
        for (k, gk) in self.groups:
            a = dt * nu * k
            keep = 1 - (1 - theta) * a
            ab = np.zeros((5, 2 * nt))
            ab[2, 2 * n] = 1 + theta * a
            ab[0, 2 * n[:-1] + 2] = -keep
            ab[3, 2 * n[1:] - 1] = -dt * gk * theta
            ab[1, 2 * n + 1] = -dt * gk * (1 - theta)
            ab[2, 2 * n + 1] = 1 + theta * a
            ab[4, 2 * n[1:] - 1] = -keep
            ab[1, 2 * n[:-1] + 2] = dt * k * theta
            ab[3, 2 * n] = dt * k * (1 - theta)
            self.bands[(k, gk)] = (ab, a)

    def __call__(self, res: np.ndarray) -> np.ndarray:
        out = np.zeros_like(res)
        # the sweep pins the mass, so I - L is the identity on the zero mode
        zero = (slice(None),) + (0,) * (res.ndim - 1)
        out[zero] = res[zero]
        th = self.theta
        for key, idxs in self.groups.items():
            ab, a = self.bands[key]
            cols = np.stack([res[(slice(None),) + i] for i in idxs], axis=1)
            rhs = np.zeros((2 * self.nt, len(idxs)), dtype=complex)
            rhs[1::2] = cols[1:] * (1 + th * a) - cols[:-1] * (1 - (1 - th) * a)
            z = solve_banded((2, 2), ab, rhs)
            for c, i in enumerate(idxs):
                out[(slice(1, None),) + i] = z[1::2, c]
        return out


def _solve_newton(problem, sw, x, opts) -> MfgTrajectory:
    spatial = tuple(range(1, x.ndim))
    shape = x.shape
    n_d = problem.nx**problem.m0.dim
    inner = _LinearizedInverse(sw)

    def to_vals(h):
        return np.fft.ifftn(h * n_d, axes=spatial).real

    def to_hat(v):
        return np.fft.fftn(v, axes=spatial) / n_d

    # unknowns are m - 1: the finite-difference Jacobian step scales with |v|
    def full(v):
        h = np.empty(shape, dtype=complex)
        h[0] = sw.m0_hat
        h[1:] = to_hat(v.reshape((shape[0] - 1,) + shape[1:]) + 1.0)
        return h

    def residual(v):
        _, m_new = sw.apply(full(v))
        return to_vals(m_new[1:]).ravel() - 1.0 - v

    def precond(v):
        r = np.zeros(shape, dtype=complex)
        r[1:] = to_hat(v.reshape((shape[0] - 1,) + shape[1:]))
        return to_vals(inner(r)[1:]).ravel()

    residuals: list[float] = []

    def record(v, f):
        residuals.append(float(np.max(np.sqrt(np.mean(f.reshape(shape[0] - 1, -1) ** 2, axis=1)))))
        log.debug("newton iteration %d residual %.3e", len(residuals), residuals[-1])

    size = (shape[0] - 1) * n_d
    M = LinearOperator((size, size), matvec=precond, dtype=float)
    v0 = to_vals(x[1:]).ravel() - 1.0
    try:
        v = newton_krylov(residual, v0, f_tol=opts.tol, maxiter=opts.max_iter, method="lgmres",
                          inner_M=M, callback=record)
    except (NoConvergence, SolverError, ValueError, FloatingPointError) as exc:
        raise ConvergenceError(f"Newton-Krylov failed: {exc}", residuals) from exc
    xh = full(v)
    phi, m_new = sw.apply(xh)
    res = float(np.max(_slice_l2(m_new - xh)))
    residuals.append(res)
    if res > opts.tol:
        raise ConvergenceError(f"Newton-Krylov stopped at residual {res:.3e}", residuals)
    return _finalize(problem, sw, m_new, phi, len(residuals), res, residuals)


def _finalize(problem, sw, m_hat, phi_hat, iterations, res, residuals) -> MfgTrajectory:
    grid = sw.grid
    spatial = tuple(range(1, m_hat.ndim))
    n_d = grid.n**grid.dim
    m = np.fft.ifftn(m_hat * n_d, axes=spatial).real
    phi = np.fft.ifftn(phi_hat * n_d, axes=spatial).real
    nz = grid.nonzero
    mu_abs2 = np.abs(m_hat) ** 2
    h = np.sqrt(np.sum(np.where(nz, mu_abs2 / np.where(nz, grid.k, 1.0), 0.0), axis=spatial))
    grad = np.sqrt(np.sum(grid.k * np.abs(phi_hat) ** 2, axis=spatial))
    mass = m.mean(axis=spatial)
    min_m = m.min(axis=spatial)
    a_crit = None
    try:
        xi0 = critical_mode(problem.params.nu, problem.params.kernel)
        idx = (slice(None),) + tuple(v % grid.n for v in xi0)
        a_crit = 2.0 * m_hat[idx].real
    except ValueError:
        pass
    traj = MfgTrajectory(problem.times, m, phi, h, grad, mass, min_m, a_crit, iterations, res, residuals)
    if np.any(min_m <= 0):
        raise PositivityError(f"density lost positivity (min m = {min_m.min():.3e})")
    return traj


def spectra(traj: MfgTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of m and phi for every time slice."""
    spatial = tuple(range(1, traj.m.ndim))
    n_d = traj.m[0].size
    return (np.fft.fftn(traj.m, axes=spatial) / n_d, np.fft.fftn(traj.phi, axes=spatial) / n_d)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class TurnpikeReport:
    times: np.ndarray
    energy: np.ndarray
    energy_rate: float | None
    reference_rate: float | None
    midpoint_energy: float

    @property
    def flat(self) -> bool:
        return self.energy_rate is None

    @property
    def amplitude_rate(self) -> float | None:
        """Decay rate of sqrt(E), directly comparable with rho(gamma)."""
        return None if self.energy_rate is None else 0.5 * self.energy_rate

    @property
    def ratio(self) -> float | None:
        if self.energy_rate is None or not self.reference_rate:
            return None
        return self.energy_rate / self.reference_rate

    def summary(self) -> dict:
        return {
            "energy_rate": self.energy_rate,
            "amplitude_rate": self.amplitude_rate,
            "two_rho": self.reference_rate,
            "ratio": self.ratio,
            "midpoint_energy": self.midpoint_energy,
            "flat": self.flat,
        }


def turnpike_report(traj: MfgTrajectory, params: ModelParams) -> TurnpikeReport:
    """Fit log E(t) on [0.2T, 0.5T]; E = ||m-1||_{H^-1}^2 + ||grad phi||_{L^2}^2."""
    t = traj.times
    T = t[-1]
    E = traj.energy
    lo, hi = FIT_WINDOW[0] * T, FIT_WINDOW[1] * T
    if np.count_nonzero((t >= lo - 1e-12) & (t <= hi + 1e-12)) < 3:
        raise ValueError("trajectory too short for the fit window")
    rho = spectral_gap(params)
    ref = None if rho is None else 2.0 * rho
    mid = float(np.interp(0.5 * T, t, E))
    if np.max(E[(t >= lo) & (t <= hi)]) == 0.0:
        return TurnpikeReport(t, E, None, ref, mid)
    rate = exp_decay_rate(t, E, (lo, hi))
    return TurnpikeReport(t, E, rate, ref, mid)


# ---------------------------------------------------------------------------
# data presets


def cosine_mode_data(nx: int, epsilon: float, xi0=(1,), terminal: float = 0.0) -> tuple[GridField, GridField]:
    """m0 = 1 + eps cos(2 pi xi0.x), g = terminal * eps cos(2 pi xi0.x)."""
    xi0 = tuple(xi0)
    dim = len(xi0)

    def mode(*x):
        return np.cos(2 * np.pi * sum(k * xx for k, xx in zip(xi0, x)))

    m0 = GridField.from_function(lambda *x: 1.0 + epsilon * mode(*x), nx, dim, kind="density")
    g = GridField.from_function(lambda *x: terminal * epsilon * mode(*x), nx, dim)
    return m0, g


def random_smooth_data(nx: int, epsilon: float, seed: int, dim: int = 1, modes: int = 4) -> tuple[GridField, GridField]:
    """Seeded random trigonometric data with |xi|_inf <= modes, each scaled to sup norm eps."""
    rng = np.random.default_rng(seed)
    grid = spectral_grid(dim, nx)
    mask = np.all(np.abs(grid.freqs) <= modes, axis=-1) & grid.nonzero & ~grid.nyquist

    def draw():
        c = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * mask
        decay = 1.0 / (1.0 + grid.k / (2 * np.pi) ** 2)
        vals = grid.ifft(c * decay)
        # real part of ifft of a non-Hermitian spectrum is the Hermitian projection
        vals -= vals.mean()
        return epsilon * vals / np.max(np.abs(vals))

    m0 = GridField(1.0 + draw(), "density")
    g = GridField(draw())
    return m0, g


def make_problem(params: ModelParams, T: float, nx: int, nt: int | None = None, epsilon: float = 1e-2,
                 preset: str = "cosine_mode", seed: int = 0, nt_per_unit: int = 200) -> MfgProblem:
    if nt is None:
        nt = max(16, int(math.ceil(nt_per_unit * T)))
    dim = params.kernel.dim
    if preset == "cosine_mode":
        try:
            xi0 = critical_mode(params.nu, params.kernel)
        except ValueError:
            xi0 = (1,) + (0,) * (dim - 1)
        m0, g = cosine_mode_data(nx, epsilon, xi0)
    elif preset == "random_smooth":
        m0, g = random_smooth_data(nx, epsilon, seed, dim)
    else:
        raise ValueError(f"unknown data preset {preset!r}")
    return MfgProblem(params, m0, g, T, nt)


# ---------------------------------------------------------------------------
# critical experiment


@dataclass
class CriticalRow:
    T: float
    midpoint_energy: float
    a_mid: float
    sine_mid: float
    stable_mid: float
    iterations: int


@dataclass
class CriticalExperiment:
    rows: list[CriticalRow]
    midpoint_slope: float | None
    stable_rate: float | None
    c1: float
    failures: list[str]

    def summary(self) -> dict:
        return {
            "midpoint_slope": self.midpoint_slope,
            "stable_rate": self.stable_rate,
            "c1": self.c1,
            "failures": self.failures,
        }

    def csv_rows(self) -> list[dict]:
        return [
            {"T": r.T, "E_mid": r.midpoint_energy, "a_mid": r.a_mid, "sine_mid": r.sine_mid,
             "stable_mid": r.stable_mid, "iterations": r.iterations}
            for r in self.rows
        ]


def stable_gap_at_criticality(nu: float, kernel: KernelSpec, cutoff: int | None = None) -> float:
    """c1 = min over xi != +-xi0 of sqrt(sigma_xi(gamma_c))."""
    gc, _ = critical_coupling(nu, kernel)
    xi0 = critical_mode(nu, kernel)
    params = ModelParams(nu, gc, kernel)
    from .spectral import enumerate_modes, sigma_xi

    cutoff = max(cutoff or 0, kernel.cutoff + 1, 2)
    neg = tuple(-v for v in xi0)
    vals = [sigma_xi(params, xi) for xi in enumerate_modes(kernel.dim, cutoff) if xi not in (xi0, neg)]
    return math.sqrt(min(vals))


def critical_split(traj: MfgTrajectory, xi0, j: int) -> tuple[float, float, float]:
    """(cosine amplitude a, sine amplitude, stable-complement norm) at slice j."""
    m_hat, phi_hat = spectra(traj)
    grid = spectral_grid(traj.m.ndim - 1, traj.m.shape[1])
    idx = tuple(v % grid.n for v in xi0)
    nidx = tuple((-v) % grid.n for v in xi0)
    c = m_hat[j][idx]
    a, b = 2 * c.real, -2 * c.imag
    mu_s = m_hat[j].copy()
    mu_s[(0,) * grid.dim] = 0
    mu_s[idx] = 0
    mu_s[nidx] = 0
    w_s = phi_hat[j].copy()
    w_s[idx] = 0
    w_s[nidx] = 0
    nz = grid.nonzero
    hm1 = math.sqrt(float(np.sum(np.abs(mu_s[nz]) ** 2 / grid.k[nz])))
    gr = math.sqrt(float(np.sum(grid.k * np.abs(w_s) ** 2)))
    return a, b, hm1 + gr


def critical_midpoint_experiment(nu: float, kernel: KernelSpec, epsilon: float, T_list,
                                 nx: int = 32, nt_per_unit: int = 200,
                                 opts: SolverOptions | None = None) -> CriticalExperiment:
    """Full forward-backward solves at gamma = gamma_c with cosine-mode data.

    Horizons that fail to converge are recorded in ``failures`` and left out
    of the fits (the reachable horizon is capped rather than extrapolated).
    """
    gc, _ = critical_coupling(nu, kernel)
    xi0 = critical_mode(nu, kernel)
    params = ModelParams(nu, gc, kernel)
    opts = opts or SolverOptions(method="newton", max_iter=60)
    rows, failures = [], []
    for T in T_list:
        problem = make_problem(params, T, nx, epsilon=epsilon, nt_per_unit=nt_per_unit)
        try:
            traj = solve_mfg(problem, opts)
        except SolverError as exc:
            failures.append(f"T={T}: {exc}")
            continue
        j = problem.nt // 2
        a, b, stable = critical_split(traj, xi0, j)
        if abs(b) > 1e-8:
            failures.append(f"T={T}: phase condition violated (sine amplitude {b:.3e})")
        rows.append(CriticalRow(T, float(traj.energy[j]), a, b, stable, traj.iterations))
    slope = rate = None
    if len(rows) >= 2:
        slope = loglog_slope([r.T for r in rows], [r.a_mid for r in rows]).slope
        stab = [(r.T, r.stable_mid) for r in rows if r.stable_mid > 0]
        if len(stab) >= 2:
            rate = -line_fit([s[0] for s in stab], np.log([s[1] for s in stab])).slope
    return CriticalExperiment(rows, slope, rate, stable_gap_at_criticality(nu, kernel), failures)
