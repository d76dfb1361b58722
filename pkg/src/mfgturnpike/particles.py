"""Particle simulation driven by the mean-field feedback and circular W2.

Particles on the unit circle follow dX = -grad phi(t, X) dt + sqrt(2 nu) dW,
discretized by Euler-Maruyama with the drift evaluated exactly from the
Fourier coefficients of phi (linear interpolation between stored time
slices).  Random numbers come from a Philox counter-based generator keyed by
(seed, stream), so runs are reproducible and streams independent.

The quadratic Wasserstein distance on the circle uses the quantile
reduction: with F, G the quantile functions and G lifted periodically,

    W2^2 = min_theta int_0^1 (F^-1(t) - G^-1(t + theta))^2 dt,

a convex function of theta minimized by golden-section search.  Quantile
functions are piecewise linear (constant on atoms, linear on uniform
density cells), so each evaluation is an exact sum over merged breakpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import GridField, KernelSpec, ModelParams, critical_coupling

REFERENCE_CELLS = 4096


# ---------------------------------------------------------------------------
# quantile functions and W2 on the circle


@dataclass(frozen=True)
class Quantile:
    """Piecewise-linear quantile function on [0, 1].

    Piece j covers levels [knots[j], knots[j+1]] and runs linearly from
    left[j] to right[j]; values lie in [0, 1].
    """

    knots: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> Quantile:
        x = np.sort(np.mod(np.asarray(samples, dtype=float).ravel(), 1.0))
        if x.size == 0:
            raise ValueError("need at least one sample")
        knots = np.arange(x.size + 1) / x.size
        return cls(knots, x, x)

    @classmethod
    def uniform(cls) -> Quantile:
        return cls(np.array([0.0, 1.0]), np.array([0.0]), np.array([1.0]))

    @classmethod
    def from_cells(cls, masses) -> Quantile:
        """Density constant on each of len(masses) equal cells of [0, 1)."""
        p = np.asarray(masses, dtype=float)
        if np.any(p < 0):
            raise ValueError("cell masses must be nonnegative")
        p = p / p.sum()
        M = p.size
        edges = np.arange(M + 1) / M
        keep = p > 0
        cdf = np.concatenate([[0.0], np.cumsum(p[keep])])
        cdf[-1] = 1.0
        return cls(cdf, edges[:-1][keep], edges[1:][keep])

    @classmethod
    def from_density(cls, density: GridField, cells: int = REFERENCE_CELLS) -> Quantile:
        return cls.from_cells(cell_masses(density, cells))

    def lifted(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pieces of the periodic lift s -> Q(s - k) + k covering [lo, hi]."""
        ks = np.arange(math.floor(lo) - 1, math.ceil(hi) + 1)
        a = np.concatenate([self.knots[:-1] + k for k in ks])
        b = np.concatenate([self.knots[1:] + k for k in ks])
        L = np.concatenate([self.left + k for k in ks])
        R = np.concatenate([self.right + k for k in ks])
        sel = (b > lo) & (a < hi)
        return a[sel], b[sel], np.stack([L[sel], R[sel]])


def cell_masses(density: GridField, cells: int = REFERENCE_CELLS) -> np.ndarray:
    """Exact integrals of the trigonometric interpolant of a 1-d density over equal cells."""
    if density.dim != 1:
        raise ValueError("only one-dimensional densities are supported")
    c = density.spectrum
    n = density.n
    xi = np.fft.fftfreq(n, 1.0 / n)
    edges = np.arange(cells + 1) / cells
    out = np.full(cells, c[0].real / cells)
    for j in range(1, n // 2):
        # paired +-xi contributions: 2 Re(c_xi (e(xi b) - e(xi a)) / (2 pi i xi))
        prim = np.exp(2j * np.pi * xi[j] * edges) / (2j * np.pi * xi[j])
        out += 2.0 * (c[j] * np.diff(prim)).real
    if np.any(out <= 0):
        raise ValueError("reference density is not positive on every cell")
    return out


def _piece_values(knots, L, R, s, idx):
    t0, t1 = knots[idx], knots[idx + 1]
    w = np.where(t1 > t0, (s - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
    return L[idx] + (R[idx] - L[idx]) * w


def transport_cost(F: Quantile, G: Quantile, theta: float) -> float:
    """int_0^1 (F^-1(t) - G~^-1(t + theta))^2 dt, computed exactly."""
    ga, gb, gv = G.lifted(theta, 1.0 + theta)
    pts = np.unique(np.concatenate([F.knots, np.clip(ga - theta, 0, 1), np.clip(gb - theta, 0, 1)]))
    a, b = pts[:-1], pts[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    mid = 0.5 * (a + b)
    fi = np.clip(np.searchsorted(F.knots, mid, side="right") - 1, 0, F.left.size - 1)
    f_a = _piece_values(F.knots, F.left, F.right, a, fi)
    f_b = _piece_values(F.knots, F.left, F.right, b, fi)
    gk = np.concatenate([ga, gb[-1:]])
    gi = np.clip(np.searchsorted(gk, mid + theta, side="right") - 1, 0, ga.size - 1)
    g_a = _piece_values(gk, gv[0], gv[1], a + theta, gi)
    g_b = _piece_values(gk, gv[0], gv[1], b + theta, gi)
    da, db = f_a - g_a, f_b - g_b
    return float(np.sum((b - a) * (da * da + da * db + db * db)) / 3.0)


def _as_quantile(x) -> Quantile:
    if isinstance(x, Quantile):
        return x
    if isinstance(x, str):
        if x != "uniform":
            raise ValueError(f"unknown reference {x!r}")
        return Quantile.uniform()
    if isinstance(x, GridField):
        if x.dim != 1:
            raise NotImplementedError("W2 is only supported on the one-dimensional circle")
        return Quantile.from_density(x)
    arr = np.asarray(x, dtype=float)
    if arr.ndim > 1 and arr.shape[-1] != 1:
        raise NotImplementedError("W2 is only supported on the one-dimensional circle")
    return Quantile.from_samples(arr)


def w2_circle(samples, reference="uniform", grid_points: int = 16) -> float:
    """Quadratic Wasserstein distance on the unit circle.

    ``samples`` and ``reference`` may each be sample positions, a 1-d
    density GridField, the string "uniform", or a Quantile.  The convex
    objective is scanned on a coarse theta grid to bracket the minimum and
    then refined by golden-section search.
    """
    F = _as_quantile(samples)
    G = _as_quantile(reference)
    thetas = np.linspace(-1.0, 1.0, grid_points + 1)
    vals = np.array([transport_cost(F, G, t) for t in thetas])
    i = int(np.clip(np.argmin(vals), 1, grid_points - 1))
    best = min(golden_section(lambda t: transport_cost(F, G, t), thetas[i - 1], thetas[i + 1]), float(vals.min()))
    return math.sqrt(max(best, 0.0))


INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, a: float, b: float, tol: float = 1e-14, max_iter: int = 200) -> float:
    """Minimum value of a unimodal function on [a, b] (flat stretches allowed)."""
    c, d = b - INV_PHI * (b - a), a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return min(fc, fd)


# ---------------------------------------------------------------------------
# particles


@dataclass(frozen=True)
class DriftField:
    """Time-indexed gradient of phi on a 1-d grid, evaluated off-grid exactly."""

    times: np.ndarray
    coeffs: np.ndarray  # (len(times), M) complex Fourier coefficients of phi for xi = 1..M

    @classmethod
    def from_trajectory(cls, times, phi_values) -> DriftField:
        phi = np.asarray(phi_values, dtype=float)
        if phi.ndim != 2:
            raise ValueError("drift fields are one-dimensional")
        n = phi.shape[1]
        c = np.fft.fft(phi, axis=1) / n
        # the Nyquist coefficient carries no derivative
        return cls(np.asarray(times, dtype=float), c[:, 1:n // 2])

    def coefficients_at(self, t: float) -> np.ndarray:
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[j], self.times[j + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1 - w) * self.coeffs[j] + w * self.coeffs[j + 1]

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        c = self.coefficients_at(t)
        M = c.size
        z = np.exp(2j * np.pi * x)
        powers = np.cumprod(np.broadcast_to(z[:, None], (x.size, M)), axis=1)
        xi = np.arange(1, M + 1)
        return 2.0 * np.real(powers @ (2j * np.pi * xi * c))


@dataclass
class ParticleEnsemble:
    N: int
    positions: np.ndarray
    seed: int
    time: float

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two particles")
        if self.positions.shape != (self.N,) or np.any(self.positions < 0) or np.any(self.positions >= 1):
            raise ValueError("positions must be N points in [0, 1)")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def sample_density(density: GridField | str, N: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling from the uniform law or a 1-d density GridField."""
    u = rng.random(N)
    if isinstance(density, str):
        if density != "uniform":
            raise ValueError(f"unknown density {density!r}")
        return u
    q = Quantile.from_density(density)
    j = np.clip(np.searchsorted(q.knots, u, side="right") - 1, 0, q.left.size - 1)
    return np.mod(_piece_values(q.knots, q.left, q.right, u, j), 1.0)


def _wrap(x: np.ndarray) -> np.ndarray:
    x = np.mod(x, 1.0)
    x[x >= 1.0] = 0.0
    return x


def simulate_particles(N: int, nu: float, drift: DriftField | str | None, T: float, dt: float,
                       seed: int, initial: GridField | str | np.ndarray = "uniform",
                       snapshot_times=(), stream: int = 0) -> dict[float, ParticleEnsemble]:
    """Euler-Maruyama with periodic wrapping; returns ensembles at the snapshot times and T."""
    if dt > 1e-2:
        raise ValueError("dt must not exceed 1e-2")
    rng = make_rng(seed, stream)
    if isinstance(initial, np.ndarray):
        x = _wrap(np.array(initial, dtype=float))
    else:
        x = sample_density(initial, N, rng)
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of dt")
    wanted = {int(round(s / dt)): float(s) for s in snapshot_times}
    wanted[steps] = float(T)
    out: dict[float, ParticleEnsemble] = {}
    if 0 in wanted:
        out[wanted[0]] = ParticleEnsemble(N, x.copy(), seed, 0.0)
    zero_drift = drift is None or (isinstance(drift, str) and drift == "zero")
    amp = math.sqrt(2.0 * nu * dt)
    for n in range(steps):
        t = n * dt
        noise = rng.standard_normal(N)
        if zero_drift:
            x = x + amp * noise
        else:
            x = x - drift.gradient(t, x) * dt + amp * noise
        x = _wrap(x)
        if n + 1 in wanted:
            out[wanted[n + 1]] = ParticleEnsemble(N, x.copy(), seed, (n + 1) * dt)
    return out


def pair_correlation_proxy(positions: np.ndarray, modes: int = 1) -> float:
    """Low-frequency distance between the two-particle law and the product of marginals.

    Averages over all ordered pairs within one ensemble (exchangeability):
    max over |p|, |q| <= modes, p, q != 0 of
    |E_pairs e(p X_i + q X_j) - E e(p X) E e(q X)|.
    """
    x = np.asarray(positions, dtype=float)
    N = x.size
    z = np.exp(2j * np.pi * x)
    worst = 0.0
    ps = [p for p in range(-modes, modes + 1) if p != 0]
    S = {p: np.sum(z**p) for p in range(-2 * modes, 2 * modes + 1)}
    for p in ps:
        for q in ps:
            joint = (S[p] * S[q] - S[p + q]) / (N * (N - 1))
            worst = max(worst, abs(joint - S[p] * S[q] / N**2))
    return float(worst)


# ---------------------------------------------------------------------------
# propagation-of-chaos experiment


@dataclass
class ChaosRow:
    N: int
    seed: int
    t: float
    w2_to_mf: float
    w2_to_uniform: float
    pair_proxy: float


@dataclass
class ChaosReport:
    rows: list[ChaosRow]
    gamma: float
    T: float
    notes: list[str] = field(default_factory=list)

    def csv_rows(self) -> list[dict]:
        return [
            {"N": r.N, "seed": r.seed, "t": r.t, "w2_to_mf": r.w2_to_mf, "w2_to_uniform": r.w2_to_uniform,
             "pair_proxy": r.pair_proxy}
            for r in self.rows
        ]

    def stats(self, t: float, key: str = "w2_to_mf") -> dict[int, dict]:
        out = {}
        for N in sorted({r.N for r in self.rows}):
            v = np.array([getattr(r, key) for r in self.rows if r.N == N and abs(r.t - t) < 1e-12])
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            out[N] = {"median": float(med), "q1": float(q1), "q3": float(q3), "count": int(v.size)}
        return out

    def medians_decreasing(self, t: float) -> bool:
        meds = [s["median"] for s in self.stats(t).values()]
        return all(b < a for a, b in zip(meds, meds[1:]))

    def summary(self) -> dict:
        times = sorted({r.t for r in self.rows})
        return {
            "gamma": self.gamma,
            "T": self.T,
            "w2_to_mf": {str(t): self.stats(t) for t in times},
            "pair_proxy": {str(t): self.stats(t, "pair_proxy") for t in times},
            "medians_decreasing": {str(t): self.medians_decreasing(t) for t in times},
            "notes": self.notes,
        }


def _chaos_task(args):
    N, seed, nu, drift, T, dt, m0, refs = args
    snaps = simulate_particles(N, nu, drift, T, dt, seed, initial=m0, snapshot_times=list(refs))
    rows = []
    for t, ref in refs.items():
        x = snaps[t].positions
        rows.append(ChaosRow(N, seed, t, w2_circle(x, ref), w2_circle(x, "uniform"), pair_correlation_proxy(x)))
    return rows


def chaos_experiment(nu: float, gamma: float, kernel: KernelSpec, N_list, T: float, seeds,
                     nx: int = 16, dt: float = 1e-3, epsilon: float = 0.2, workers: int = 1,
                     nt_per_unit: int = 200) -> ChaosReport:
    """Particles driven by the solved mean-field feedback, compared with m^T at T/2 and T.

    The finite-N system here is the mean-field feedback surrogate (every
    particle uses -grad phi^T of the limiting game), not a finite-N Nash
    equilibrium.
    """
    from .mfg import make_problem, solve_mfg

    gc, _ = critical_coupling(nu, kernel)
    if not gamma < gc:
        raise ValueError("the chaos experiment needs gamma < gamma_c")
    params = ModelParams(nu, gamma, kernel)
    steps = int(round(T / dt))
    nt = max(16, int(math.ceil(nt_per_unit * T / 2)) * 2)
    problem = make_problem(params, T, nx, nt=nt, epsilon=epsilon)
    traj = solve_mfg(problem)
    drift = DriftField.from_trajectory(traj.times, traj.phi)
    refs = {T / 2: GridField(traj.m[nt // 2]), T: GridField(traj.m[nt])}
    if steps % 2:
        raise ValueError("T/2 must be a multiple of dt")
    tasks = [(int(N), int(s), nu, drift, T, dt, problem.m0, refs) for N in N_list for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_chaos_task, tasks))
    else:
        chunks = [_chaos_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    note = "particles follow the mean-field feedback -grad phi^T (surrogate for a finite-N equilibrium)"
    return ChaosReport(rows, gamma, T, [note])
