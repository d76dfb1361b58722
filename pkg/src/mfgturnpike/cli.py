"""Command-line experiment runner.

    mfgturnpike <kind> [--config FILE | --preset NAME] [--out DIR] [--threads N]
    mfgturnpike presets

Exit codes: 0 success, 1 solver failure (partial artifacts kept, FAILED
marker written), 2 configuration error (nothing written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .io import write_csv, write_field_dump, write_json
from .presets import SCHEMA_VERSION, preset_config, presets
from .spectral import (
    KernelSpec,
    ModelParams,
    critical_coupling,
    load_kernel,
    make_cosine_kernel,
    make_two_mode_kernel,
    mode_report,
)

log = logging.getLogger("mfgturnpike")

KINDS = ("spectrum", "linear-bvp", "solve", "turnpike-sweep", "critical-sweep", "bifurcate", "chaos")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config(path: str | Path) -> tuple[dict, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    if not text.strip():
        raise ConfigError(f"{path}:1: config is empty")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    return cfg, text


def _need(block: dict, key: str, where: str, text: str, src: str):
    if key not in block:
        line = _line_of(text, where.split(".")[-1]) if text else None
        loc = f"{src}:{line}" if line else src
        raise ConfigError(f"{loc}: missing required field '{where}.{key}'")
    return block[key]


def build_kernel(spec, base_dir: Path | None = None) -> KernelSpec:
    if not isinstance(spec, dict):
        raise ConfigError("model.kernel must be an object")
    if "file" in spec:
        path = Path(spec["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_kernel(path)
    preset = spec.get("preset")
    if preset == "cosine":
        return make_cosine_kernel(int(spec.get("dim", 1)))
    if preset == "two-mode":
        return make_two_mode_kernel(float(spec["a1"]), float(spec["a2"]))
    if "coeffs" in spec:
        return KernelSpec.from_dict(spec)
    raise ConfigError(f"model.kernel: unknown kernel specification {spec!r}")


def build_params(model: dict, kernel: KernelSpec, require_gamma: bool = True) -> ModelParams:
    nu = float(model.get("nu", 1.0))
    if "gamma" in model:
        gamma = float(model["gamma"])
    elif "gamma_over_gamma_c" in model:
        gc, _ = critical_coupling(nu, kernel)
        if not math.isfinite(gc):
            raise ConfigError("model.gamma_over_gamma_c needs a finite gamma_c (use model.gamma)")
        gamma = float(model["gamma_over_gamma_c"]) * gc
    elif require_gamma:
        raise ConfigError("model: one of 'gamma' or 'gamma_over_gamma_c' is required")
    else:
        gamma = 0.0
    return ModelParams(nu, gamma, kernel)


REQUIRED = {
    "spectrum": [],
    "linear-bvp": ["T"],
    "solve": ["T"],
    "turnpike-sweep": ["gamma_fractions"],
    "critical-sweep": ["T_list"],
    "bifurcate": [],
    "chaos": ["N_list", "seeds", "T"],
}
NEEDS_GAMMA = {"spectrum", "linear-bvp", "solve", "chaos"}


def validate(cfg: dict, text: str = "", src: str = "<config>", base_dir: Path | None = None) -> dict:
    """Check the config and return the resolved objects; raises ConfigError."""
    kind = cfg.get("kind")
    if kind not in KINDS:
        line = _line_of(text, "kind")
        raise ConfigError(f"{src}:{line or 1}: 'kind' must be one of {', '.join(KINDS)}")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{src}:{_line_of(text, 'schema_version') or 1}: unsupported schema_version {version}")
    model = _need(cfg, "model", "config", text, src)
    if not isinstance(model, dict):
        raise ConfigError(f"{src}:{_line_of(text, 'model') or 1}: 'model' must be an object")
    try:
        kernel = build_kernel(_need(model, "kernel", "model", text, src), base_dir)
        params = build_params(model, kernel, kind in NEEDS_GAMMA)
    except ConfigError as exc:
        raise ConfigError(f"{src}:{_line_of(text, 'model') or 1}: {exc}") from exc
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"{src}:{_line_of(text, 'kernel') or 1}: invalid model block: {exc}") from exc
    exp = cfg.get("experiment", {})
    num = cfg.get("numerics", {})
    if not isinstance(exp, dict) or not isinstance(num, dict):
        raise ConfigError(f"{src}: 'experiment' and 'numerics' must be objects")
    for key in REQUIRED[kind]:
        _need(exp, key, "experiment", text, src)
    return {"kind": kind, "params": params, "kernel": kernel, "experiment": exp, "numerics": num,
            "seed": int(cfg.get("seed", 0))}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def thread_count(flag: int | None) -> int:
    if flag:
        return max(1, int(flag))
    env = os.environ.get("TOOL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TOOL_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _pool_map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# experiments; each returns (summary, artifacts) and raises on solver failure


def _solver_options(num: dict, **overrides):
    from .mfg import SolverOptions

    kw = {k: num[k] for k in ("omega", "tol", "max_iter", "scheme", "anderson", "method") if k in num}
    kw.update(overrides)
    return SolverOptions(**kw)


def run_spectrum(job, out: Path, threads: int):
    from .plotting import plot_dispersion

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    report = mode_report(params, num.get("mode_cutoff"))
    rows = report.csv_rows()
    arts = [write_csv(out / "spectrum.csv", rows, ["xi", "k_xi", "khat", "sigma", "rho"])]
    summary = report.summary()
    if "ratio_scan" in exp:
        scan = []
        for r in exp["ratio_scan"]:
            kern = make_two_mode_kernel(float(r), 1.0)
            gc, crit = critical_coupling(params.nu, kern)
            scan.append({"a1_over_a2": r, "gamma_c": gc, "degenerate": len(crit) > 1,
                         "critical_modes": ";".join(" ".join(str(v) for v in pair[0]) for pair in crit)})
        arts.append(write_csv(out / "threshold_scan.csv", scan))
        summary["threshold_scan"] = scan
    arts.append(plot_dispersion(out / "spectrum.svg", rows))
    return summary, arts


def _data(params, nx, exp, T=None, nt=None, nt_per_unit=200):
    from .mfg import make_problem

    return make_problem(params, float(T if T is not None else exp["T"]), nx, nt=nt,
                        epsilon=float(exp.get("epsilon", 1e-2)), preset=exp.get("data", "cosine_mode"),
                        seed=int(exp.get("seed", 0)), nt_per_unit=nt_per_unit)


def run_linear(job, out: Path, threads: int):
    from .linear_bvp import linear_turnpike_envelope
    from .plotting import plot_energy

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    problem = _data(params, int(num.get("nx", 32)), exp, nt=16)
    T = problem.T
    times = np.linspace(0.0, T, int(exp.get("samples", 401)))
    env = linear_turnpike_envelope(params, problem.m0, problem.g, T, times)
    arts = [write_csv(out / "linear_envelope.csv", env.csv_rows(), ["t", "h_minus1_m", "l2_grad_phi"])]
    arts.append(plot_energy(out / "linear_envelope.svg", env.times, env.energy, "linear envelope"))
    return env.summary(), arts


def run_solve(job, out: Path, threads: int):
    from .mfg import solve_mfg, turnpike_report
    from .plotting import plot_energy

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    problem = _data(params, int(num.get("nx", 64)), exp, nt=num.get("nt"), nt_per_unit=int(num.get("nt_per_unit", 200)))
    traj = solve_mfg(problem, _solver_options(num))
    rep = turnpike_report(traj, params)
    cols = ["t", "h_minus1", "l2_grad", "mass", "min_m", "a_crit"]
    arts = [write_csv(out / "trajectory.csv", traj.csv_rows(), cols)]
    if exp.get("dump_fields"):
        arts.append(write_field_dump(out / "fields.bin", problem.m0.dim, problem.nx, problem.nt, problem.T,
                                     traj.m, traj.phi))
    arts.append(plot_energy(out / "energy.svg", traj.times, traj.energy))
    summary = rep.summary()
    summary.update({"iterations": traj.iterations, "residual": traj.residual})
    return summary, arts


def _sweep_task(args):
    from .mfg import solve_mfg, turnpike_report
    from .spectral import spectral_gap

    params, nx, exp, nt, opts, rho_T = args
    rho = spectral_gap(params)
    problem = _data(params, nx, exp, T=rho_T / rho, nt=nt)
    traj = solve_mfg(problem, opts)
    rep = turnpike_report(traj, params)
    return {"rate": rep.amplitude_rate, "rho": rho, "T": problem.T, "iterations": traj.iterations}


def run_turnpike_sweep(job, out: Path, threads: int):
    from .fitting import line_fit
    from .plotting import plot_loglog
    from .spectral import c_star

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    nu, kernel = params.nu, params.kernel
    gc, _ = critical_coupling(nu, kernel)
    fracs = [float(f) for f in exp["gamma_fractions"]]
    opts = _solver_options(num)
    tasks = [(ModelParams(nu, f * gc, kernel), int(num.get("nx", 32)), exp, num.get("nt"), opts,
              float(exp.get("rho_T", 14.0))) for f in fracs]
    results = _pool_map(_sweep_task, tasks, threads)
    cs = c_star(nu, kernel)
    rows = []
    for f, r in zip(fracs, results):
        gap = gc - f * gc
        rows.append({"gamma_over_gamma_c": f, "gamma": f * gc, "fitted_rate": r["rate"], "rho": r["rho"],
                     "ratio_to_rho": r["rate"] / r["rho"], "ratio_to_cstar_law": r["rate"] / (cs * math.sqrt(gap)),
                     "T": r["T"], "iterations": r["iterations"]})
    fit = line_fit(np.log([gc - row["gamma"] for row in rows]), np.log([row["fitted_rate"] for row in rows]))
    arts = [write_csv(out / "turnpike_sweep.csv", rows)]
    arts.append(plot_loglog(out / "turnpike_sweep.svg", [gc - r["gamma"] for r in rows],
                            [r["fitted_rate"] for r in rows], "gamma_c - gamma", "fitted rate",
                            "rate degeneration", fit=(fit.slope, fit.intercept)))
    return {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "gamma_c": gc, "c_star": cs}, arts


def _critical_task(args):
    from .mfg import critical_midpoint_experiment

    nu, kernel, eps, T, nx, ntu, opts = args
    return critical_midpoint_experiment(nu, kernel, eps, [T], nx=nx, nt_per_unit=ntu, opts=opts)


def run_critical(job, out: Path, threads: int):
    from .fitting import line_fit, loglog_slope
    from .mfg import CriticalExperiment, stable_gap_at_criticality
    from .plotting import plot_loglog
    from .reduced import ReducedModel, midpoint_scaling

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    nu, kernel = params.nu, params.kernel
    T_list = [float(t) for t in exp["T_list"]]
    opts = _solver_options(num, method=num.get("method", "newton"), max_iter=int(num.get("max_iter", 60)))
    tasks = [(nu, kernel, float(exp.get("epsilon", 0.1)), T, int(num.get("nx", 16)),
              int(num.get("nt_per_unit", 200)), opts) for T in T_list]
    parts = _pool_map(_critical_task, tasks, threads)
    rows = [r for p in parts for r in p.rows]
    failures = [f for p in parts for f in p.failures]
    slope = loglog_slope([r.T for r in rows], [r.a_mid for r in rows]) if len(rows) >= 2 else None
    stab = [(r.T, r.stable_mid) for r in rows if r.stable_mid > 0]
    rate = -line_fit([s[0] for s in stab], np.log([s[1] for s in stab])).slope if len(stab) >= 2 else None
    ex = CriticalExperiment(rows, None if slope is None else slope.slope, rate,
                            stable_gap_at_criticality(nu, kernel), failures)
    arts = [write_csv(out / "critical_midpoint.csv", ex.csv_rows(),
                      ["T", "E_mid", "a_mid", "sine_mid", "stable_mid", "iterations"])]
    beta = float(exp.get("reduced_beta", 1.0))
    a0 = float(exp.get("reduced_a0", 0.1))
    red = midpoint_scaling(ReducedModel(beta), a0, exp.get("reduced_T_list", [10, 100, 1000]),
                           float(exp.get("reduced_dt", 1e-3)))
    arts.append(write_csv(out / "reduced_midpoint.csv", red.csv_rows(), ["T", "a_mid", "closed_form_a_mid"]))
    if slope is not None:
        arts.append(plot_loglog(out / "critical_midpoint.svg", [r.T for r in rows], [r.a_mid for r in rows],
                                "T", "|a(T/2)|", "critical midpoint amplitude", fit=(slope.slope, slope.intercept)))
    summary = ex.summary()
    summary["reduced"] = red.summary()
    if failures:
        summary["horizon_cap"] = max((r.T for r in rows), default=None)
    return summary, arts


def run_bifurcate(job, out: Path, threads: int):
    from .plotting import plot_bifurcation
    from .stationary import (
        beta_cross_check,
        bifurcation_schedule,
        continue_branch,
        critical_eigen_tracking,
        pitchfork_check,
        subcritical_probe,
    )

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    nu, kernel = params.nu, params.kernel
    nx = int(num.get("nx", 32))
    gc, _ = critical_coupling(nu, kernel)
    sched = bifurcation_schedule(gc, float(exp.get("delta_min", 1e-4)), float(exp.get("delta_max", 1e-2)),
                                 int(exp.get("points", 8)))
    diagram = continue_branch(nu, kernel, sched, nx=nx)
    track = critical_eigen_tracking(nu, kernel, gc * np.linspace(0.98, 1.02, 9), nx=nx)
    arts = [write_csv(out / "bifurcation.csv", diagram.csv_rows(),
                      ["gamma", "gamma_minus_gc", "A", "remainder_norm", "lambda", "residual", "min_m"])]
    arts.append(write_csv(out / "eigen_tracking.csv", track.csv_rows(), ["gamma", "eigenvalue"]))
    summary = {"diagram": diagram.summary(), "eigen_tracking": track.summary()}
    if diagram.points:
        arts.append(plot_bifurcation(out / "bifurcation.svg", [r["gamma_minus_gc"] for r in diagram.csv_rows()],
                                     [p.amplitude for p in diagram.points]))
        summary["beta_check"] = beta_cross_check(diagram, track.alpha_hat)
        pt = diagram.points[0]
        summary["pitchfork"] = pitchfork_check(pt, ModelParams(nu, pt.gamma, kernel)).summary()
    summary["subcritical_probe_max_mu"] = max(subcritical_probe(nu, kernel, nx=nx))
    if diagram.failures:
        raise SolverFailure("; ".join(diagram.failures), summary, arts)
    return summary, arts


def run_chaos(job, out: Path, threads: int):
    from .particles import chaos_experiment
    from .plotting import plot_chaos

    params, num, exp = job["params"], job["numerics"], job["experiment"]
    seeds = exp["seeds"]
    seeds = list(range(int(seeds))) if isinstance(seeds, int) else [int(s) for s in seeds]
    seeds = [job["seed"] * 100003 + s for s in seeds]
    report = chaos_experiment(params.nu, params.gamma, params.kernel, [int(n) for n in exp["N_list"]],
                              float(exp["T"]), seeds, nx=int(num.get("nx", 16)), dt=float(exp.get("dt", 1e-3)),
                              epsilon=float(exp.get("epsilon", 0.2)), workers=threads,
                              nt_per_unit=int(num.get("nt_per_unit", 200)))
    arts = [write_csv(out / "chaos.csv", report.csv_rows(),
                      ["N", "seed", "t", "w2_to_mf", "w2_to_uniform", "pair_proxy"])]
    arts.append(plot_chaos(out / "chaos.svg", report.stats(float(exp["T"]) / 2)))
    return report.summary(), arts


class SolverFailure(RuntimeError):
    def __init__(self, message: str, summary: dict | None = None, artifacts=None):
        super().__init__(message)
        self.summary = summary or {}
        self.artifacts = artifacts or []


RUNNERS = {
    "spectrum": run_spectrum,
    "linear-bvp": run_linear,
    "solve": run_solve,
    "turnpike-sweep": run_turnpike_sweep,
    "critical-sweep": run_critical,
    "bifurcate": run_bifurcate,
    "chaos": run_chaos,
}


def _versions() -> dict:
    import matplotlib
    import scipy

    return {"mfgturnpike": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def run(cfg: dict, out: str | Path, threads: int | None = None, text: str = "", src: str = "<config>",
        base_dir: Path | None = None) -> int:
    """Validate, run, and write artifacts plus a manifest; returns the exit code."""
    try:
        job = validate(cfg, text, src, base_dir)
        nthreads = thread_count(threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, summary, arts, message = "ok", {}, [], None
    try:
        summary, arts = RUNNERS[job["kind"]](job, out, nthreads)
    except SolverFailure as exc:
        status, summary, arts, message = "failed", exc.summary, exc.artifacts, str(exc)
    except (RuntimeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        status, message = "failed", f"{type(exc).__name__}: {exc}"
    if summary:
        arts.append(write_json(out / "summary.json", summary))
    if status != "ok":
        (out / "FAILED").write_text(message + "\n")
        print(f"solver failure: {message}", file=sys.stderr)
    manifest = {
        "kind": job["kind"],
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": job["seed"],
        "threads": nthreads,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - start,
        "status": status,
        "message": message,
        "artifacts": sorted(Path(a).name for a in arts),
    }
    write_json(out / "manifest.json", manifest)
    return EXIT_OK if status == "ok" else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgturnpike", description="MFG turnpike and phase-transition experiments")
    parser.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("presets", help="list the named preset configurations")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="JSON config file")
        src.add_argument("--preset", help="named preset (see 'presets')")
        p.add_argument("--out", default=None, help="output directory (default: ./out/<kind>)")
        p.add_argument("--threads", type=int, default=None, help="worker processes (default: TOOL_THREADS or CPU count)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name in presets():
            print(f"{name}\t{preset_config(name)['kind']}")
        return EXIT_OK
    text, src, base = "", "<preset>", None
    try:
        if args.preset:
            cfg = preset_config(args.preset)
            src = f"<preset {args.preset}>"
        else:
            cfg, text = load_config(args.config)
            src, base = args.config, Path(args.config).resolve().parent
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.setdefault("kind", args.command)
    if cfg["kind"] != args.command:
        print(f"config error: {src}:{_line_of(text, 'kind') or 1}: config kind {cfg['kind']!r} "
              f"does not match subcommand {args.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or os.path.join("out", args.command)
    return run(cfg, out, args.threads, text, src, base)


if __name__ == "__main__":
    sys.exit(main())
