"""Turnpike behaviour and phase transitions of mean field games on the torus.

Spectral thresholds, exact linear forward-backward solutions, a nonlinear
pseudospectral MFG solver, stationary bifurcation analysis, the reduced
critical amplitude model and particle diagnostics.
"""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    GridField,
    KernelSpec,
    ModelParams,
    c_star,
    critical_coupling,
    critical_mode,
    make_cosine_kernel,
    make_two_mode_kernel,
    mode_report,
    spectral_gap,
)

__all__ = [
    "GridField",
    "KernelSpec",
    "ModelParams",
    "c_star",
    "critical_coupling",
    "critical_mode",
    "make_cosine_kernel",
    "make_two_mode_kernel",
    "mode_report",
    "spectral_gap",
    "__version__",
]
