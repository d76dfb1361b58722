"""Fourier machinery on the flat torus.

Kernels are stored as sparse maps of real Fourier coefficients, fields as
samples on a uniform grid with a lazily cached spectrum.  The coefficient
convention is ``f_hat(xi) = int f(x) exp(-2 pi i xi.x) dx`` on the unit torus,
so ``f_hat = fftn(values) / n**d``.

Everything here is a pure function of immutable inputs; ``numpy.fft`` is
reentrant so the same objects can be shared between worker processes.
"""

from __future__ import annotations

import functools
from fractions import Fraction
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

ALGEBRAIC_TOL = 1e-12
SPECTRAL_TOL = 1e-10
TIE_RTOL = 1e-9

Freq = tuple[int, ...]


class DegenerateCriticalModeError(ValueError):
    """The minimum defining the critical coupling is attained by several pairs."""


class GapClosedError(ValueError):
    """Raised when an operation needs a strictly positive spectral gap."""


def _as_freq(xi, dim: int | None = None) -> Freq:
    if np.isscalar(xi):
        xi = (int(xi),)
    out = tuple(int(v) for v in xi)
    if dim is not None and len(out) != dim:
        raise ValueError(f"frequency {out} does not have dimension {dim}")
    return out


def _neg(xi: Freq) -> Freq:
    return tuple(-v for v in xi)


def canonical(xi: Freq) -> Freq:
    """Representative of the pair {xi, -xi} whose first nonzero entry is positive."""
    for v in xi:
        if v != 0:
            return xi if v > 0 else _neg(xi)
    return xi


def wavenumber_sq(xi) -> float:
    """k_xi = (2 pi |xi|)^2."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return float((2.0 * np.pi) ** 2 * np.dot(xi, xi))


@dataclass(frozen=True)
class KernelSpec:
    """Even, mean-zero interaction kernel given by finitely many Fourier coefficients.

    Build it through :meth:`from_coeffs`, which completes evenness; the raw
    constructor validates but does not complete.
    """

    dim: int
    coeffs: Mapping[Freq, float]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        clean = {}
        for xi, v in self.coeffs.items():
            xi = _as_freq(xi, self.dim)
            if not any(xi):
                raise ValueError("K_hat(0) must be absent (kernel is mean-zero)")
            v = float(v)
            if not math.isfinite(v):
                raise ValueError(f"non-finite coefficient at {xi}")
            clean[xi] = v
        for xi, v in clean.items():
            if clean.get(_neg(xi)) != v:
                raise ValueError(f"kernel is not even at {xi}")
        object.__setattr__(self, "coeffs", dict(sorted(clean.items())))

    @classmethod
    def from_coeffs(cls, dim: int, coeffs: Mapping) -> KernelSpec:
        """Accept one representative per +-xi pair and fill in the partner."""
        full: dict[Freq, float] = {}
        for xi, v in coeffs.items():
            xi = _as_freq(xi, dim)
            for key in (xi, _neg(xi)):
                if key in full and full[key] != float(v):
                    raise ValueError(f"conflicting coefficients for {key}")
                full[key] = float(v)
        return cls(dim, full)

    @property
    def cutoff(self) -> int:
        """Largest sup-norm |xi|_inf among stored frequencies (0 for the zero kernel)."""
        return max((max(abs(v) for v in xi) for xi in self.coeffs), default=0)

    def khat(self, xi) -> float:
        return self.coeffs.get(_as_freq(xi, self.dim), 0.0)

    def pairs(self) -> list[Freq]:
        """Canonical representatives of the stored +-xi pairs."""
        return sorted({canonical(xi) for xi in self.coeffs})

    def is_monotone(self) -> bool:
        """Lasry-Lions monotonicity: every coefficient nonnegative."""
        return all(v >= 0 for v in self.coeffs.values())

    def symbol(self, freqs: np.ndarray) -> np.ndarray:
        """Evaluate K_hat on an integer frequency array of shape (..., dim)."""
        freqs = np.asarray(freqs)
        out = np.zeros(freqs.shape[:-1])
        for xi, v in self.coeffs.items():
            out[np.all(freqs == np.array(xi), axis=-1)] = v
        return out

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "coeffs": [{"xi": list(xi), "khat": self.coeffs[xi]} for xi in self.pairs()],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> KernelSpec:
        try:
            dim = int(data["dim"])
            entries = data["coeffs"]
            coeffs = {_as_freq(e["xi"], dim): float(e["khat"]) for e in entries}
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed kernel specification: {exc}") from exc
        return cls.from_coeffs(dim, coeffs)


def load_kernel(path: str | Path) -> KernelSpec:
    with open(path) as fh:
        return KernelSpec.from_dict(json.load(fh))


def save_kernel(kernel: KernelSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(kernel.to_dict(), fh, indent=2)


def make_cosine_kernel(dim: int = 1) -> KernelSpec:
    """K(x) = -cos(2 pi x_1); K_hat(+-e_1) = -1/2."""
    e1 = (1,) + (0,) * (dim - 1)
    return KernelSpec.from_coeffs(dim, {e1: -0.5})


def make_two_mode_kernel(a1: float, a2: float) -> KernelSpec:
    """K(x) = -a1 cos(2 pi x) - a2 cos(4 pi x) on the circle."""
    if a1 <= 0 or a2 <= 0:
        raise ValueError("a1 and a2 must be positive")
    return KernelSpec.from_coeffs(1, {(1,): -a1 / 2, (2,): -a2 / 2})


@dataclass(frozen=True)
class ModelParams:
    nu: float
    gamma: float
    kernel: KernelSpec

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")

    def with_gamma(self, gamma: float) -> ModelParams:
        return ModelParams(self.nu, gamma, self.kernel)


# ---------------------------------------------------------------------------
# dispersion relation and thresholds


def sigma_xi(params: ModelParams, xi) -> float:
    """nu^2 k^2 + gamma k K_hat(xi), as a11^2 + a12 a21 of the stored M_xi.

    The entries nu k, gamma K_hat and k are the doubles held by mode_matrix;
    the combination is evaluated exactly and rounded once.  Near threshold
    the two terms cancel, and this keeps M^2 = sigma I to one rounding of
    sigma instead of eps (nu k)^2.
    """
    xi = _as_freq(xi, params.kernel.dim)
    if not any(xi):
        raise ValueError("the zero mode is excluded")
    k = wavenumber_sq(xi)
    a11 = Fraction(params.nu * k)
    gk = Fraction(params.gamma * params.kernel.khat(xi))
    return float(a11 * a11 + gk * Fraction(k))


class CriticalCoupling(NamedTuple):
    gamma_c: float
    critical_set: list[tuple[Freq, Freq]]


def critical_coupling(nu: float, kernel: KernelSpec) -> CriticalCoupling:
    """Smallest coupling at which some mode loses hyperbolicity.

    Ties within ``TIE_RTOL`` are all reported; callers needing a single
    critical pair should go through :func:`critical_mode`.
    """
    ratios = {}
    for xi in kernel.pairs():
        kh = kernel.coeffs[xi]
        if kh < 0:
            ratios[xi] = nu**2 * wavenumber_sq(xi) / abs(kh)
    if not ratios:
        return CriticalCoupling(math.inf, [])
    gc = min(ratios.values())
    crit = [(xi, _neg(xi)) for xi, r in ratios.items() if r <= gc * (1 + TIE_RTOL)]
    return CriticalCoupling(gc, crit)


def critical_mode(nu: float, kernel: KernelSpec) -> Freq:
    """The canonical xi_0 of a nondegenerate critical pair."""
    gc, crit = critical_coupling(nu, kernel)
    if not math.isfinite(gc):
        raise GapClosedError("no negative Fourier coefficient: gamma_c = +inf")
    if len(crit) != 1:
        raise DegenerateCriticalModeError(
            f"degenerate critical mode: {len(crit)} pairs attain gamma_c ({[c[0] for c in crit]})"
        )
    return crit[0][0]


def c_star(nu: float, kernel: KernelSpec) -> float:
    """sqrt(k_{xi0} |K_hat(xi0)|), the prefactor of the gap near threshold."""
    xi0 = critical_mode(nu, kernel)
    return math.sqrt(wavenumber_sq(xi0) * abs(kernel.khat(xi0)))


def enumerate_modes(dim: int, cutoff: int) -> list[Freq]:
    """All nonzero xi with |xi|_inf <= cutoff, in lexicographic order."""
    rng = range(-cutoff, cutoff + 1)
    grids = np.meshgrid(*([np.array(rng)] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    return [tuple(int(v) for v in p) for p in pts if np.any(p)]


def default_mode_cutoff(kernel: KernelSpec, nx: int | None = None) -> int:
    base = nx // 3 if nx else 0
    return max(base, kernel.cutoff, 1)


def spectral_gap(params: ModelParams, mode_cutoff: int | None = None) -> float | None:
    """min sqrt(sigma_xi) over 0 < |xi|_inf <= cutoff, or None when the gap is closed.

    Beyond the kernel support sigma grows like |xi|^4, so any cutoff at or
    above the kernel cutoff gives the true infimum.
    """
    kernel = params.kernel
    if mode_cutoff is not None and mode_cutoff < kernel.cutoff:
        raise ValueError("mode_cutoff below kernel cutoff")
    cutoff = max(mode_cutoff or 0, kernel.cutoff, 1)
    sig = np.array([sigma_xi(params, xi) for xi in enumerate_modes(kernel.dim, cutoff)])
    if np.min(sig) <= 0:
        return None
    return math.sqrt(float(np.min(sig)))


@dataclass(frozen=True)
class ModeRow:
    xi: Freq
    k_xi: float
    khat: float
    sigma: float

    @property
    def rho(self) -> float | None:
        return math.sqrt(self.sigma) if self.sigma > 0 else None


@dataclass(frozen=True)
class ModeReport:
    nu: float
    gamma: float
    rows: list[ModeRow]
    gamma_c: float
    critical_set: list[tuple[Freq, Freq]]
    c_star: float | None
    rho_gamma: float | None

    @property
    def gap_closed(self) -> bool:
        return self.rho_gamma is None

    @property
    def xi0(self) -> Freq | None:
        return self.critical_set[0][0] if len(self.critical_set) == 1 else None

    def csv_rows(self) -> list[dict]:
        return [
            {
                "xi": " ".join(str(v) for v in r.xi),
                "k_xi": r.k_xi,
                "khat": r.khat,
                "sigma": r.sigma,
                "rho": "" if r.rho is None else r.rho,
            }
            for r in self.rows
        ]

    def summary(self) -> dict:
        return {
            "nu": self.nu,
            "gamma": self.gamma,
            "gamma_c": self.gamma_c if math.isfinite(self.gamma_c) else "inf",
            "critical_set": [[list(a), list(b)] for a, b in self.critical_set],
            "degenerate": len(self.critical_set) > 1,
            "c_star": self.c_star,
            "rho_gamma": "closed" if self.rho_gamma is None else self.rho_gamma,
        }


def mode_report(params: ModelParams, mode_cutoff: int | None = None) -> ModeReport:
    kernel = params.kernel
    cutoff = max(mode_cutoff or 0, kernel.cutoff, 1)
    rows = []
    for xi in enumerate_modes(kernel.dim, cutoff):
        rows.append(ModeRow(xi, wavenumber_sq(xi), kernel.khat(xi), sigma_xi(params, xi)))
    gc, crit = critical_coupling(params.nu, kernel)
    cs = None
    if len(crit) == 1:
        cs = c_star(params.nu, kernel)
    sig = [r.sigma for r in rows]
    rho = math.sqrt(min(sig)) if min(sig) > 0 else None
    return ModeReport(params.nu, params.gamma, rows, gc, crit, cs, rho)


# ---------------------------------------------------------------------------
# grid fields


@functools.lru_cache(maxsize=64)
def _freq_grid(dim: int, n: int) -> np.ndarray:
    f = np.fft.fftfreq(n, 1.0 / n).astype(int)
    grids = np.meshgrid(*([f] * dim), indexing="ij")
    out = np.stack(grids, axis=-1)
    out.setflags(write=False)
    return out


class SpectralGrid:
    """Cached wavenumber tables for an n^d periodic grid."""

    def __init__(self, dim: int, n: int):
        if n < 2 or n % 2:
            raise ValueError("points per axis must be an even integer >= 2")
        self.dim = dim
        self.n = n
        self.freqs = _freq_grid(dim, n)
        self.k = (2 * np.pi) ** 2 * np.sum(self.freqs.astype(float) ** 2, axis=-1)
        self.ik = [2j * np.pi * self.freqs[..., a] for a in range(dim)]
        self.dealias_cut = (n - 1) // 3
        self.dealias = np.all(np.abs(self.freqs) <= self.dealias_cut, axis=-1)
        self.nonzero = self.k > 0
        # Nyquist entries have no real partner; derivatives drop them
        self.nyquist = np.any(np.abs(self.freqs) == n // 2, axis=-1)

    def symbol(self, kernel: KernelSpec) -> np.ndarray:
        if kernel.dim != self.dim:
            raise ValueError("kernel and grid dimensions differ")
        if kernel.cutoff >= self.n // 2:
            raise ValueError(
                f"grid with {self.n} points per axis does not resolve kernel cutoff {kernel.cutoff}"
            )
        return kernel.symbol(self.freqs)

    def points(self) -> list[np.ndarray]:
        x = np.arange(self.n) / self.n
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values) / self.n**self.dim

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs * self.n**self.dim).real

    def product(self, a_hat: np.ndarray, b_hat: np.ndarray) -> np.ndarray:
        """Dealiased spectrum of the product of two fields given by spectra."""
        a = self.ifft(np.where(self.dealias, a_hat, 0))
        b = self.ifft(np.where(self.dealias, b_hat, 0))
        return np.where(self.dealias, self.fft(a * b), 0)

    def grad(self, f_hat: np.ndarray) -> list[np.ndarray]:
        return [np.where(self.nyquist, 0, ik * f_hat) for ik in self.ik]


@functools.lru_cache(maxsize=32)
def spectral_grid(dim: int, n: int) -> SpectralGrid:
    return SpectralGrid(dim, n)


FIELD_KINDS = (None, "mean-zero", "density")


@dataclass(frozen=True, eq=False)
class GridField:
    """Real periodic scalar field sampled at x_j = j/n along each axis."""

    values: np.ndarray
    kind: str | None = None
    dim: int = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim < 1 or len(set(vals.shape)) != 1:
            raise ValueError("values must be an n^d array")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dim", vals.ndim)
        object.__setattr__(self, "n", vals.shape[0])
        spectral_grid(self.dim, self.n)  # validates n
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite values")
        scale = max(1.0, float(np.max(np.abs(vals))))
        if self.kind == "mean-zero" and abs(vals.mean()) > ALGEBRAIC_TOL * scale:
            raise ValueError(f"mean-zero field has mean {vals.mean():.3e}")
        if self.kind == "density":
            if abs(vals.mean() - 1) > ALGEBRAIC_TOL * scale:
                raise ValueError(f"density has mass {vals.mean():.15g}")
            if vals.min() <= 0:
                raise ValueError("density is not strictly positive")

    @classmethod
    def from_function(cls, func: Callable, n: int, dim: int = 1, kind: str | None = None) -> GridField:
        grid = spectral_grid(dim, n)
        return cls(func(*grid.points()), kind)

    @classmethod
    def from_spectrum(cls, coeffs: np.ndarray, kind: str | None = None) -> GridField:
        coeffs = np.asarray(coeffs)
        grid = spectral_grid(coeffs.ndim, coeffs.shape[0])
        return cls(grid.ifft(coeffs), kind)

    @classmethod
    def zeros(cls, n: int, dim: int = 1) -> GridField:
        return cls(np.zeros((n,) * dim), "mean-zero")

    @property
    def grid(self) -> SpectralGrid:
        return spectral_grid(self.dim, self.n)

    @functools.cached_property
    def spectrum(self) -> np.ndarray:
        out = self.grid.fft(self.values)
        out.setflags(write=False)
        return out

    def coeff(self, xi) -> complex:
        idx = tuple(int(v) % self.n for v in _as_freq(xi, self.dim))
        return complex(self.spectrum[idx])

    def mean(self) -> float:
        return float(self.values.mean())

    def deviation(self) -> GridField:
        """The field minus its mean, tagged mean-zero."""
        return GridField(self.values - self.values.mean(), "mean-zero")

    def shift(self, tau) -> GridField:
        """Spectral translation: returns x -> f(x + tau)."""
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (self.dim,))
        phase = np.exp(2j * np.pi * (self.grid.freqs @ tau))
        coeffs = self.spectrum * phase
        # keep the Nyquist entry real so the shifted field stays real-valued
        coeffs = np.where(self.grid.nyquist, coeffs.real, coeffs)
        vals = self.grid.ifft(coeffs)
        if self.kind == "mean-zero":
            vals = vals - vals.mean()
        return GridField(vals, self.kind if self.kind != "density" or vals.min() > 0 else None)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def grad_l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.k * np.abs(self.spectrum) ** 2)))

    def sobolev_norm(self, s: float = 2.0) -> float:
        w = (1.0 + self.grid.k) ** s
        return float(np.sqrt(np.sum(w * np.abs(self.spectrum) ** 2)))

    def __add__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.values - other)

    def __mul__(self, c: float):
        return GridField(self.values * c)

    __rmul__ = __mul__


def round_trip_error(field_: GridField) -> float:
    back = field_.grid.ifft(field_.spectrum)
    scale = max(np.max(np.abs(field_.values)), 1e-300)
    return float(np.max(np.abs(back - field_.values)) / scale)


def _require_mean_zero(f: GridField, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(f.values))))
    if abs(f.mean()) > ALGEBRAIC_TOL * scale:
        raise ValueError(f"{what} requires a mean-zero field (mean = {f.mean():.3e})")


def h_minus1_norm(f: GridField) -> float:
    """sqrt(sum_{xi != 0} |f_hat|^2 / (2 pi |xi|)^2)."""
    _require_mean_zero(f, "h_minus1_norm")
    g = f.grid
    return float(np.sqrt(np.sum(np.abs(f.spectrum[g.nonzero]) ** 2 / g.k[g.nonzero])))


def quadratic_form(kernel: KernelSpec, mu: GridField) -> float:
    """Parseval sum sum K_hat(xi) |mu_hat(xi)|^2; negative values witness non-monotonicity."""
    _require_mean_zero(mu, "quadratic_form")
    sym = mu.grid.symbol(kernel)
    return float(np.sum(sym * np.abs(mu.spectrum) ** 2))


def interaction_energy(kernel: KernelSpec, gamma: float, m: GridField) -> float:
    """(gamma/2) iint K(x-y) m(x) m(y); the mean of m drops out because K_hat(0)=0."""
    sym = m.grid.symbol(kernel)
    return 0.5 * gamma * float(np.sum(sym * np.abs(m.spectrum) ** 2))


def convolve(kernel: KernelSpec, f: GridField) -> GridField:
    sym = f.grid.symbol(kernel)
    return GridField(f.grid.ifft(sym * f.spectrum), "mean-zero")


# ---------------------------------------------------------------------------
# mode matrices


@dataclass(frozen=True)
class ModeMatrix:
    """M_xi acting on the column (w_hat, mu_hat)."""

    a11: float
    a12: float
    a21: float
    a22: float
    sigma: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def rho(self) -> float | None:
        return math.sqrt(self.sigma) if self.sigma > 0 else None

    def eigenvalues(self) -> np.ndarray:
        """Roots of lambda^2 - sigma (the characteristic polynomial, since trace is 0)."""
        if self.sigma >= 0:
            r = math.sqrt(self.sigma)
            return np.array([r, -r], dtype=complex)
        r = math.sqrt(-self.sigma)
        return np.array([1j * r, -1j * r])

    def regime(self) -> str:
        """Sign of sigma, with |sigma| <= ALGEBRAIC_TOL (nu k)^2 counted as zero."""
        if abs(self.sigma) <= ALGEBRAIC_TOL * self.a11**2:
            return "nilpotent"
        return "hyperbolic" if self.sigma > 0 else "elliptic"


def mode_matrix(params: ModelParams, xi) -> ModeMatrix:
    xi = _as_freq(xi, params.kernel.dim)
    if not any(xi):
        raise ValueError("the zero mode is excluded")
    k = wavenumber_sq(xi)
    kh = params.kernel.khat(xi)
    nu, g = params.nu, params.gamma
    return ModeMatrix(nu * k, -g * kh, -k, -nu * k, sigma_xi(params, xi))


def grid_mode_arrays(params: ModelParams, grid: SpectralGrid) -> tuple[np.ndarray, np.ndarray]:
    """k_xi and sigma_xi evaluated on every entry of the grid spectrum."""
    sym = grid.symbol(params.kernel)
    k = grid.k
    return k, params.nu**2 * k**2 + params.gamma * k * sym


def iter_pairs(dim: int, freqs: Iterable[Sequence[int]]) -> list[Freq]:
    return sorted({canonical(_as_freq(xi, dim)) for xi in freqs if any(xi)})
