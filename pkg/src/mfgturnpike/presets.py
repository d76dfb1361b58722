"""Named ready-to-run experiment configurations."""

from __future__ import annotations

import copy

SCHEMA_VERSION = 1

_COSINE = {"preset": "cosine", "dim": 1}

PRESETS: dict[str, dict] = {
    "cosine-spectrum": {
        "kind": "spectrum",
        "model": {"nu": 1.0, "kernel": _COSINE, "gamma_over_gamma_c": 0.5},
        "numerics": {"mode_cutoff": 8},
    },
    "cosine-linear": {
        "kind": "linear-bvp",
        "model": {"nu": 1.0, "kernel": _COSINE, "gamma_over_gamma_c": 0.5},
        "numerics": {"nx": 32},
        "experiment": {"T": 4.0, "epsilon": 0.01, "data": "cosine_mode", "samples": 401},
    },
    "cosine-turnpike": {
        "kind": "turnpike-sweep",
        "model": {"nu": 1.0, "kernel": _COSINE},
        "numerics": {"nx": 32, "nt": 800, "max_iter": 2000},
        "experiment": {"gamma_fractions": [0.5, 0.7, 0.85, 0.93, 0.97], "rho_T": 14.0, "epsilon": 0.01,
                       "data": "cosine_mode"},
    },
    "cosine-critical": {
        "kind": "critical-sweep",
        "model": {"nu": 1.0, "kernel": _COSINE},
        "numerics": {"nx": 16, "nt_per_unit": 200, "method": "newton", "max_iter": 60},
        "experiment": {"T_list": [8, 16, 32, 64], "epsilon": 0.1, "reduced_a0": 0.1},
    },
    "cosine-bifurcation": {
        "kind": "bifurcate",
        "model": {"nu": 1.0, "kernel": _COSINE},
        "numerics": {"nx": 32},
        "experiment": {"delta_min": 1e-4, "delta_max": 1e-2, "points": 8},
    },
    "two-mode-threshold": {
        "kind": "spectrum",
        "model": {"nu": 1.0, "kernel": {"preset": "two-mode", "a1": 1.0, "a2": 3.0}, "gamma_over_gamma_c": 0.5},
        "numerics": {"mode_cutoff": 6},
        "experiment": {"ratio_scan": [1 / 3, 0.3, 0.25, 0.2]},
    },
    "2d-spectrum": {
        "kind": "spectrum",
        "model": {"nu": 1.0, "kernel": {"preset": "cosine", "dim": 2}, "gamma_over_gamma_c": 0.5},
        "numerics": {"mode_cutoff": 3},
    },
    "chaos-subcritical": {
        "kind": "chaos",
        "model": {"nu": 1.0, "kernel": _COSINE, "gamma_over_gamma_c": 0.5},
        "numerics": {"nx": 16, "nt_per_unit": 200},
        "experiment": {"N_list": [100, 1000, 10000], "seeds": 20, "T": 0.2, "dt": 0.001, "epsilon": 0.2},
    },
    "cosine-solve": {
        "kind": "solve",
        "model": {"nu": 1.0, "kernel": _COSINE, "gamma_over_gamma_c": 0.5},
        "numerics": {"nx": 32, "nt_per_unit": 200},
        "experiment": {"T": 1.0, "epsilon": 0.01, "data": "random_smooth", "seed": 1, "dump_fields": False},
    },
}


def presets() -> list[str]:
    return sorted(PRESETS)


def preset_config(name: str) -> dict:
    try:
        cfg = copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(presets())}") from None
    cfg["schema_version"] = SCHEMA_VERSION
    cfg.setdefault("seed", 0)
    return cfg
