"""Stationary MFG states, Newton continuation past gamma_c and pitchfork checks.

With m = 1 + mu and phi = w the stationary system reads

    r1 = -nu Lap w + 1/2 |grad w|^2 - gamma K*mu + lam = 0
    r2 = -nu Lap mu - div((1 + mu) grad w)            = 0

The unknowns are the Fourier coefficients of mu and w on the dealiased box
|xi|_inf <= (n-1)//3 (one representative per +-xi pair, zero mode excluded so
both means vanish by construction) together with lam.  Products of two such
fields have no aliasing inside the box, so the discrete residual is the exact
Galerkin projection and commutes with translations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fitting import line_fit, loglog_slope
from .spectral import (
    GridField,
    KernelSpec,
    ModelParams,
    canonical,
    critical_coupling,
    critical_mode,
    spectral_grid,
)

log = logging.getLogger(__name__)

ACCEPT_TOL = 1e-9
PHASE_TOL = 1e-10
SINGULAR_RTOL = 1e-12


class SingularJacobianError(RuntimeError):
    """The phase-fixed Jacobian is singular: at or too near criticality."""


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class StationaryState:
    mu: GridField
    w: GridField
    lam: float
    gamma: float
    residual: float
    iterations: int = 0

    @property
    def m(self) -> np.ndarray:
        return 1.0 + self.mu.values

    @property
    def min_m(self) -> float:
        return float(np.min(self.m))

    def amplitude(self, xi0) -> float:
        return 2.0 * self.mu.coeff(xi0).real

    def sine_amplitude(self, xi0) -> float:
        return -2.0 * self.mu.coeff(xi0).imag

    def shift(self, tau) -> StationaryState:
        return StationaryState(self.mu.shift(tau), self.w.shift(tau), self.lam, self.gamma, self.residual)


class _Layout:
    """Packing of (mu_hat, w_hat, lam) into a real vector."""

    def __init__(self, dim: int, n: int, xi0):
        self.grid = grid = spectral_grid(dim, n)
        self.cut = grid.dealias_cut
        modes = []
        for idx in zip(*np.nonzero(grid.dealias & grid.nonzero)):
            xi = tuple(int(v) for v in grid.freqs[idx])
            if canonical(xi) == xi:
                modes.append(xi)
        self.modes = sorted(modes, key=lambda v: (sum(x * x for x in v), v))
        self.pos = [tuple(v % n for v in xi) for xi in self.modes]
        self.neg = [tuple((-v) % n for v in xi) for xi in self.modes]
        self.H = len(self.modes)
        self.size = 4 * self.H + 1
        self.xi0 = tuple(xi0)
        self.i0 = self.modes.index(canonical(self.xi0))
        if canonical(self.xi0) != self.xi0:
            raise ValueError("the critical mode must be given in canonical orientation")

    def spectra(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        H = self.H
        mu_c = x[0:H] + 1j * x[H:2 * H]
        w_c = x[2 * H:3 * H] + 1j * x[3 * H:4 * H]
        shape = self.grid.k.shape
        mu = np.zeros(shape, dtype=complex)
        w = np.zeros(shape, dtype=complex)
        for j, (p, q) in enumerate(zip(self.pos, self.neg)):
            mu[p], mu[q] = mu_c[j], np.conj(mu_c[j])
            w[p], w[q] = w_c[j], np.conj(w_c[j])
        return mu, w, float(x[4 * H])

    def pack(self, mu_hat: np.ndarray, w_hat: np.ndarray, lam: float) -> np.ndarray:
        mu_c = np.array([mu_hat[p] for p in self.pos])
        w_c = np.array([w_hat[p] for p in self.pos])
        return np.concatenate([mu_c.real, mu_c.imag, w_c.real, w_c.imag, [lam]])

    def rows(self, r1: np.ndarray, r2: np.ndarray, phase: float) -> np.ndarray:
        a = np.array([r1[p] for p in self.pos])
        b = np.array([r2[p] for p in self.pos])
        zero = (0,) * self.grid.dim
        return np.concatenate([[r1[zero].real], a.real, a.imag, b.real, b.imag, [phase]])

    def phase(self, x: np.ndarray) -> float:
        return float(x[self.H + self.i0])


def _residual_spectra(grid, sym, params, mu, w, lam):
    k = grid.k
    gw = grid.grad(w)
    r1 = params.nu * k * w - params.gamma * sym * mu
    r2 = params.nu * k * mu + k * w
    for ik, d in zip(grid.ik, gw):
        r1 = r1 + 0.5 * grid.product(d, d)
        r2 = r2 - ik * grid.product(mu, d)
    r1[(0,) * grid.dim] += lam
    mask = grid.dealias
    return np.where(mask, r1, 0), np.where(mask, r2, 0)


def _jvp_spectra(grid, sym, params, mu, w, dmu, dw, dlam):
    k = grid.k
    gw, gdw = grid.grad(w), grid.grad(dw)
    r1 = params.nu * k * dw - params.gamma * sym * dmu
    r2 = params.nu * k * dmu + k * dw
    for ik, d, dd in zip(grid.ik, gw, gdw):
        r1 = r1 + grid.product(d, dd)
        r2 = r2 - ik * (grid.product(dmu, d) + grid.product(mu, dd))
    r1[(0,) * grid.dim] += dlam
    mask = grid.dealias
    return np.where(mask, r1, 0), np.where(mask, r2, 0)


class _System:
    def __init__(self, params: ModelParams, nx: int, xi0=None):
        dim = params.kernel.dim
        if xi0 is None:
            xi0 = critical_mode(params.nu, params.kernel)
        self.params = params
        self.layout = _Layout(dim, nx, xi0)
        self.grid = self.layout.grid
        self.sym = self.grid.symbol(params.kernel)

    def residual(self, x: np.ndarray) -> np.ndarray:
        mu, w, lam = self.layout.spectra(x)
        r1, r2 = _residual_spectra(self.grid, self.sym, self.params, mu, w, lam)
        return self.layout.rows(r1, r2, self.layout.phase(x))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        mu, w, _ = self.layout.spectra(x)
        lay = self.layout
        J = np.empty((lay.size + 1, lay.size))
        for j in range(lay.size):
            e = np.zeros(lay.size)
            e[j] = 1.0
            dmu, dw, dlam = lay.spectra(e)
            r1, r2 = _jvp_spectra(self.grid, self.sym, self.params, mu, w, dmu, dw, dlam)
            J[:, j] = lay.rows(r1, r2, lay.phase(e))
        return J

    def sup_residual(self, x: np.ndarray) -> float:
        mu, w, lam = self.layout.spectra(x)
        r1, r2 = _residual_spectra(self.grid, self.sym, self.params, mu, w, lam)
        return float(max(np.max(np.abs(self.grid.ifft(r1))), np.max(np.abs(self.grid.ifft(r2)))))

    def state(self, x: np.ndarray, iterations: int = 0) -> StationaryState:
        mu, w, lam = self.layout.spectra(x)
        g = self.grid
        mu_f = GridField(g.ifft(mu) - g.ifft(mu).mean(), "mean-zero")
        w_f = GridField(g.ifft(w) - g.ifft(w).mean(), "mean-zero")
        return StationaryState(mu_f, w_f, lam, self.params.gamma, self.sup_residual(x), iterations)

    def vector(self, state: StationaryState) -> np.ndarray:
        if state.mu.n != self.grid.n:
            raise ValueError("state and system grids differ")
        return self.layout.pack(state.mu.spectrum, state.w.spectrum, state.lam)


def stationary_residual(state: StationaryState, params: ModelParams) -> tuple[GridField, GridField, dict]:
    """Both stationary equations on the grid plus the three scalar constraints."""
    grid = state.mu.grid
    sym = grid.symbol(params.kernel)
    mu = np.where(grid.dealias, state.mu.spectrum, 0)
    w = np.where(grid.dealias, state.w.spectrum, 0)
    r1, r2 = _residual_spectra(grid, sym, params, mu, w, state.lam)
    constraints = {
        "mass": float(np.mean(1.0 + state.mu.values) - 1.0),
        "w_mean": float(state.w.values.mean()),
    }
    try:
        xi0 = critical_mode(params.nu, params.kernel)
        constraints["phase"] = float(np.mean(state.mu.values * _mode_wave(grid, xi0, np.sin)))
    except ValueError:
        constraints["phase"] = 0.0
    return GridField(grid.ifft(r1)), GridField(grid.ifft(r2)), constraints


def _mode_wave(grid, xi0, fn):
    x = grid.points()
    return fn(2 * np.pi * sum(k * xx for k, xx in zip(xi0, x)))


def uniform_state(params: ModelParams, nx: int) -> StationaryState:
    z = GridField.zeros(nx, params.kernel.dim)
    return StationaryState(z, z, 0.0, params.gamma, 0.0)


def seed_state(params: ModelParams, nx: int, amplitude: float, xi0=None) -> StationaryState:
    """mu = A cos(2 pi xi0.x), w = -nu A cos(2 pi xi0.x): the critical eigenvector."""
    if xi0 is None:
        xi0 = critical_mode(params.nu, params.kernel)
    grid = spectral_grid(params.kernel.dim, nx)
    c = _mode_wave(grid, xi0, np.cos)
    mu = GridField(amplitude * c, "mean-zero")
    w = GridField(-params.nu * amplitude * c, "mean-zero")
    return StationaryState(mu, w, 0.0, params.gamma, math.inf)


def newton_solve(initial: StationaryState, params: ModelParams, tol: float = ACCEPT_TOL,
                 max_iter: int = 30, xi0=None) -> StationaryState:
    """Gauss-Newton on the phase-fixed stationary system.

    The residual has one more row than there are unknowns (the phase row
    duplicates the rank lost to translation invariance on the branch), so
    each step solves the linearized system in the least-squares sense; at a
    solution the system is consistent and convergence is quadratic.
    """
    system = _System(params, initial.mu.n, xi0)
    lay = system.layout
    x = system.vector(initial)
    history: list[float] = []
    for it in range(max_iter + 1):
        res_vec = system.residual(x)
        sup = system.sup_residual(x)
        history.append(max(sup, abs(lay.phase(x))))
        log.debug("newton %d residual %.3e", it, history[-1])
        if history[-1] <= tol:
            break
        if not math.isfinite(history[-1]) or (it > 4 and history[-1] > 1e6 * history[0]):
            raise NewtonDivergenceError("Newton iteration diverged", history)
        if it == max_iter:
            raise NewtonDivergenceError(f"no convergence after {max_iter} iterations", history)
        J = system.jacobian(x)
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= SINGULAR_RTOL * s[0]:
            raise SingularJacobianError("bordered Jacobian is singular: at or too near criticality")
        dx, *_ = np.linalg.lstsq(J, res_vec, rcond=None)
        x = x - dx
    state = system.state(x, it)
    if state.min_m <= 0:
        raise NewtonDivergenceError("converged state is not a positive density", history)
    if state.amplitude(lay.xi0) < -tol:
        # phase convention: the half-period translate carries the nonnegative cosine coefficient
        state = _half_shift(state, lay.xi0)
    return state


def _half_shift(state: StationaryState, xi0) -> StationaryState:
    xi = np.asarray(xi0, dtype=float)
    return state.shift(xi / (2.0 * float(xi @ xi)))


def jacobian_fd_check(state: StationaryState, params: ModelParams, h: float = 1e-6) -> float:
    """Max relative column error of the assembled Jacobian against central differences."""
    system = _System(params, state.mu.n)
    x = system.vector(state)
    J = system.jacobian(x)
    worst = 0.0
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        fd = (system.residual(x + e) - system.residual(x - e)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(fd - J[:, j]) / max(np.linalg.norm(J[:, j]), 1e-300)))
    return worst


# ---------------------------------------------------------------------------
# continuation


@dataclass(frozen=True)
class BranchPoint:
    state: StationaryState
    amplitude: float
    remainder_norm: float

    @property
    def gamma(self) -> float:
        return self.state.gamma


@dataclass
class BifurcationDiagram:
    points: list[BranchPoint]
    gamma_c: float
    exponent: float | None
    prefactor: float | None
    failures: list[str] = field(default_factory=list)

    @property
    def alpha_over_beta(self) -> float | None:
        return None if self.prefactor is None else self.prefactor**2

    def csv_rows(self) -> list[dict]:
        return [
            {
                "gamma": p.gamma,
                "gamma_minus_gc": p.gamma - self.gamma_c,
                "A": p.amplitude,
                "remainder_norm": p.remainder_norm,
                "lambda": p.state.lam,
                "residual": p.state.residual,
                "min_m": p.state.min_m,
            }
            for p in self.points
        ]

    def summary(self) -> dict:
        return {
            "gamma_c": self.gamma_c,
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "alpha_over_beta": self.alpha_over_beta,
            "points": len(self.points),
            "failures": self.failures,
        }


def branch_point(state: StationaryState, xi0) -> BranchPoint:
    A = state.amplitude(xi0)
    grid = state.mu.grid
    rem = GridField(state.mu.values - A * _mode_wave(grid, xi0, np.cos))
    return BranchPoint(state, A, rem.sobolev_norm(2.0))


def cold_seed_amplitude(gamma: float, gamma_c: float) -> float:
    return 0.5 * math.sqrt((gamma - gamma_c) / gamma_c)


def continue_branch(nu: float, kernel: KernelSpec, gamma_schedule, nx: int = 32,
                    alpha_over_beta: float | None = None, tol: float = ACCEPT_TOL,
                    max_seed_doublings: int = 6) -> BifurcationDiagram:
    """Follow the nontrivial branch along an increasing gamma schedule above gamma_c.

    The first point is seeded along the critical eigenvector with
    A0 = sqrt(alpha/beta) sqrt(gamma - gamma_c) when the ratio is known and
    the cold seed 0.5 sqrt((gamma - gamma_c)/gamma_c) otherwise.  A seed that
    falls into the basin of the uniform state is doubled and retried.  Later
    points warm-start from the previous state rescaled by the square-root law.
    """
    gc, _ = critical_coupling(nu, kernel)
    xi0 = critical_mode(nu, kernel)
    schedule = [float(g) for g in gamma_schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("gamma schedule must be strictly increasing")
    if not schedule or schedule[0] < gc * (1 + 1e-4) * (1 - 1e-12):
        raise ValueError("gamma schedule must start at gamma_c (1 + delta0) with delta0 >= 1e-4")
    points: list[BranchPoint] = []
    failures: list[str] = []
    prev: StationaryState | None = None
    for gamma in schedule:
        params = ModelParams(nu, gamma, kernel)
        try:
            if prev is None:
                state = _first_point(params, nx, gc, xi0, alpha_over_beta, tol, max_seed_doublings)
            else:
                scale = math.sqrt((gamma - gc) / (prev.gamma - gc))
                seed = StationaryState(prev.mu * scale, prev.w * scale, prev.lam * scale**2, gamma, math.inf)
                state = newton_solve(_retag(seed), params, tol)
        except (NewtonDivergenceError, SingularJacobianError, ValueError) as exc:
            failures.append(f"gamma={gamma:.12g}: {exc}")
            break
        bp = branch_point(state, xi0)
        if bp.amplitude <= tol:
            failures.append(f"gamma={gamma:.12g}: Newton returned the uniform state")
            break
        points.append(bp)
        prev = state
    exponent = prefactor = None
    if len(points) >= 2:
        fit = loglog_slope([p.gamma - gc for p in points], [p.amplitude for p in points])
        exponent = fit.slope
        # prefactor of the square-root law, fitted with the exponent held at 1/2
        prefactor = float(np.exp(np.mean(np.log([p.amplitude / math.sqrt(p.gamma - gc) for p in points]))))
    return BifurcationDiagram(points, gc, exponent, prefactor, failures)


def _retag(state: StationaryState) -> StationaryState:
    mu = GridField(state.mu.values - state.mu.values.mean(), "mean-zero")
    w = GridField(state.w.values - state.w.values.mean(), "mean-zero")
    return StationaryState(mu, w, state.lam, state.gamma, state.residual)


def _first_point(params, nx, gc, xi0, alpha_over_beta, tol, doublings):
    if alpha_over_beta is not None:
        A0 = math.sqrt(alpha_over_beta * (params.gamma - gc))
    else:
        A0 = cold_seed_amplitude(params.gamma, gc)
    for attempt in range(doublings + 1):
        state = newton_solve(seed_state(params, nx, A0, xi0), params, tol)
        if state.amplitude(xi0) > tol:
            return state
        log.info("seed A0=%.3e converged to the uniform state; doubling", A0)
        A0 *= 2.0
    return state


def bifurcation_schedule(gamma_c: float, lo: float = 1e-4, hi: float = 1e-2, count: int = 8) -> np.ndarray:
    return gamma_c * (1.0 + np.logspace(math.log10(lo), math.log10(hi), count))


# ---------------------------------------------------------------------------
# symmetry and uniqueness probes


@dataclass
class PitchforkReport:
    amplitude: float
    shifted_amplitude: float
    shifted_residual: float
    orbit_residuals: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        sign_ok = self.amplitude == 0.0 or abs(self.shifted_amplitude + self.amplitude) <= 1e-9 * max(1.0, abs(self.amplitude))
        return sign_ok and self.shifted_residual <= self.tol and max(self.orbit_residuals, default=0.0) <= self.tol

    def summary(self) -> dict:
        return {
            "A": self.amplitude,
            "A_shifted": self.shifted_amplitude,
            "shifted_residual": self.shifted_residual,
            "max_orbit_residual": max(self.orbit_residuals, default=0.0),
            "passed": self.passed,
        }


def state_residual(state: StationaryState, params: ModelParams) -> float:
    r1, r2, _ = stationary_residual(state, params)
    return float(max(np.max(np.abs(r1.values)), np.max(np.abs(r2.values))))


def pitchfork_check(point: BranchPoint, params: ModelParams, shifts: int = 8, seed: int = 0,
                    tol: float = ACCEPT_TOL) -> PitchforkReport:
    """Half-period translation flips A; every translate still solves the system."""
    xi0 = critical_mode(params.nu, params.kernel)
    flipped = _half_shift(point.state, xi0)
    rng = np.random.default_rng(seed)
    taus = rng.random((shifts, params.kernel.dim))
    orbit = [state_residual(point.state.shift(t), params) for t in taus]
    return PitchforkReport(point.amplitude, flipped.amplitude(xi0), state_residual(flipped, params), orbit, tol)


def local_uniqueness_probe(state: StationaryState, params: ModelParams, seeds: int = 5,
                           size: float = 1e-3, rng_seed: int = 0) -> float:
    """Max distance between Newton limits started from perturbed seeds and the given state."""
    rng = np.random.default_rng(rng_seed)
    system = _System(params, state.mu.n)
    x0 = system.vector(state)
    worst = 0.0
    for _ in range(seeds):
        pert = rng.standard_normal(x0.size) * size * max(1.0, np.max(np.abs(x0)))
        pert[-1] = 0.0
        seed = system.state(x0 + pert)
        out = newton_solve(seed, params)
        worst = max(worst, float(np.max(np.abs(system.vector(out) - x0))))
    return worst


def subcritical_probe(nu: float, kernel: KernelSpec, fraction: float = 0.99, nx: int = 32,
                      amplitudes=(0.01, 0.05, 0.1, -0.05)) -> list[float]:
    """Amplitudes reached by Newton from nontrivial seeds at gamma = fraction * gamma_c."""
    gc, _ = critical_coupling(nu, kernel)
    params = ModelParams(nu, fraction * gc, kernel)
    xi0 = critical_mode(nu, kernel)
    out = []
    for a in amplitudes:
        state = newton_solve(seed_state(params, nx, a, xi0), params)
        out.append(float(np.max(np.abs(state.mu.values))))
    return out


# ---------------------------------------------------------------------------
# critical eigenvalue tracking


@dataclass
class EigenTracking:
    gammas: np.ndarray
    eigenvalues: np.ndarray
    crossing: float
    alpha_hat: float
    fit_residual: float

    def csv_rows(self) -> list[dict]:
        return [{"gamma": g, "eigenvalue": e} for g, e in zip(self.gammas, self.eigenvalues)]

    def summary(self) -> dict:
        return {"crossing": self.crossing, "alpha_hat": self.alpha_hat, "fit_residual": self.fit_residual}


def critical_eigenvalue(params: ModelParams, nx: int = 32, xi0=None) -> float:
    """Eigenvalue of the phase-fixed linearization at the uniform state along the critical cosine.

    The linearized stationary system is reduced to mu alone by eliminating w
    through the linearized Fokker-Planck rows; the tracked eigenvalue is the
    one whose eigenvector points along Re mu_hat(xi0), signed so that it is
    positive below gamma_c.
    """
    system = _System(params, nx, xi0)
    lay = system.layout
    H = lay.H
    J = system.jacobian(np.zeros(lay.size))[:-1]
    # rows: [r1 zero mode, r1 (2H), r2 (2H)]; columns: [mu (2H), w (2H), lam]
    mu_cols = np.arange(0, 2 * H)
    w_cols = np.arange(2 * H, 4 * H)
    r1_rows = np.arange(1, 2 * H + 1)
    r2_rows = np.arange(2 * H + 1, 4 * H + 1)
    A = J[np.ix_(r1_rows, mu_cols)]
    B = J[np.ix_(r1_rows, w_cols)]
    C = J[np.ix_(r2_rows, mu_cols)]
    D = J[np.ix_(r2_rows, w_cols)]
    S = A - B @ np.linalg.solve(D, C)
    keep = np.array([j for j in range(2 * H) if j != H + lay.i0])
    S = -S[np.ix_(keep, keep)]
    vals, vecs = np.linalg.eig(S)
    target = list(keep).index(lay.i0)
    j = int(np.argmax(np.abs(vecs[target, :])))
    return float(vals[j].real)


def critical_eigen_tracking(nu: float, kernel: KernelSpec, gamma_list, nx: int = 32,
                            h_rel: float = 1e-3) -> EigenTracking:
    """Eigenvalue crossing, its location, and alpha_hat = -d(eigenvalue)/d(gamma) at gamma_c."""
    gc, _ = critical_coupling(nu, kernel)
    xi0 = critical_mode(nu, kernel)
    gammas = np.asarray(sorted(float(g) for g in gamma_list))
    if not (gammas[0] < gc < gammas[-1]):
        raise ValueError("gamma list must bracket gamma_c")
    eig = np.array([critical_eigenvalue(ModelParams(nu, g, kernel), nx, xi0) for g in gammas])
    fit = line_fit(gammas, eig)
    crossing = -fit.intercept / fit.slope
    h = h_rel * gc
    lo = critical_eigenvalue(ModelParams(nu, gc - h, kernel), nx, xi0)
    hi = critical_eigenvalue(ModelParams(nu, gc + h, kernel), nx, xi0)
    alpha_hat = -(hi - lo) / (2 * h)
    scale = max(1.0, float(np.max(np.abs(eig))))
    return EigenTracking(gammas, eig, float(crossing), float(alpha_hat), fit.max_abs_residual / scale)


def beta_cross_check(diagram: BifurcationDiagram, alpha_hat: float) -> dict:
    """beta_hat = alpha_hat / (A^2 / (gamma - gamma_c)) per branch point and from the fit."""
    per_point = [alpha_hat / (p.amplitude**2 / (p.gamma - diagram.gamma_c)) for p in diagram.points]
    from_fit = None if diagram.alpha_over_beta is None else alpha_hat / diagram.alpha_over_beta
    spread = (max(per_point) - min(per_point)) / min(per_point) if per_point else math.inf
    worst = max(abs(b - from_fit) / from_fit for b in per_point) if from_fit else math.inf
    return {
        "beta_hat_points": per_point,
        "beta_hat_fit": from_fit,
        "relative_spread": spread,
        "max_deviation_from_fit": worst,
        "passed": spread <= 0.10 and worst <= 0.10,
    }
