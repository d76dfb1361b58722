"""Static SVG figures for the CLI reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed hash salt and no date stamp keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "mfgturnpike"
SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def plot_energy(path, times, energy, title: str = "turnpike energy", reference=None) -> Path:
    """E(t) on a log scale; optional (times, values) reference curve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    e = np.asarray(energy, dtype=float)
    pos = e > 0
    ax.semilogy(np.asarray(times)[pos], e[pos], label="E(t)")
    if reference is not None:
        ax.semilogy(reference[0], reference[1], "--", label="reference")
        ax.legend()
    ax.set_xlabel("t")
    ax.set_ylabel("E(t)")
    ax.set_title(title)
    return _save(fig, path)


def plot_loglog(path, x, y, xlabel: str, ylabel: str, title: str, fit=None) -> Path:
    """Log-log scatter with an optional fitted power law (slope, intercept in log space)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    ax.loglog(x, y, "o-", label="data")
    if fit is not None:
        slope, intercept = fit
        ax.loglog(x, np.exp(intercept) * x**slope, "--", label=f"slope {slope:.3f}")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _save(fig, path)


def plot_dispersion(path, rows: list[dict], title: str = "dispersion relation") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    k = np.array([r["k_xi"] for r in rows], dtype=float)
    s = np.array([r["sigma"] for r in rows], dtype=float)
    order = np.argsort(k)
    ax.plot(np.sqrt(k[order]) / (2 * np.pi), s[order], "o")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("|xi|")
    ax.set_ylabel("sigma_xi")
    ax.set_title(title)
    return _save(fig, path)


def plot_bifurcation(path, gamma_minus_gc, amplitude, title: str = "bifurcation branch") -> Path:
    return plot_loglog(path, gamma_minus_gc, amplitude, "gamma - gamma_c", "A", title)


def plot_chaos(path, stats: dict[int, dict], title: str = "empirical W2 to the mean-field density") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    N = np.array(sorted(stats), dtype=float)
    med = np.array([stats[int(n)]["median"] for n in N])
    lo = np.array([stats[int(n)]["q1"] for n in N])
    hi = np.array([stats[int(n)]["q3"] for n in N])
    ax.errorbar(N, med, yerr=[med - lo, hi - med], fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("median W2")
    ax.set_title(title)
    return _save(fig, path)
