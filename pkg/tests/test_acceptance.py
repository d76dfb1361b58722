"""The fourteen acceptance criteria, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion with the measured quantities.
"""

import math
from fractions import Fraction
import time

import numpy as np
import pytest

from mfgturnpike.linear_bvp import ModeBvpData, linear_turnpike_envelope, solve_mode_bvp
from mfgturnpike.mfg import (
    SolverOptions,
    critical_midpoint_experiment,
    make_problem,
    random_smooth_data,
    solve_mfg,
    spectra,
    turnpike_report,
)
from mfgturnpike.particles import chaos_experiment, w2_circle
from mfgturnpike.reduced import ReducedModel, integrate_reduced, midpoint_scaling
from mfgturnpike.spectral import (
    DegenerateCriticalModeError,
    GridField,
    KernelSpec,
    ModelParams,
    c_star,
    critical_coupling,
    critical_mode,
    make_cosine_kernel,
    make_two_mode_kernel,
    mode_matrix,
    quadratic_form,
    spectral_gap,
    spectral_grid,
    wavenumber_sq,
)
from mfgturnpike.stationary import (
    beta_cross_check,
    bifurcation_schedule,
    continue_branch,
    critical_eigen_tracking,
    pitchfork_check,
    state_residual,
    subcritical_probe,
)

from oracles import rk4_shooting, w2_circle_assignment, w2_circle_bruteforce

COSINE = make_cosine_kernel()
GC = 8 * math.pi**2


class Clock:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


@pytest.mark.acceptance(1, "threshold exactness")
def test_01_threshold_exactness(record_property):
    clock = Clock()
    worst = 0.0
    for nu in (0.5, 1.0, 2.0):
        gc, _ = critical_coupling(nu, COSINE)
        worst = max(worst, abs(gc - 8 * math.pi**2 * nu**2) / (8 * math.pi**2 * nu**2),
                    abs(c_star(nu, COSINE) - math.pi * math.sqrt(2)) / (math.pi * math.sqrt(2)))
    record_property("max_rel_err", f"{worst:.2e}")
    record_property("time_s", f"{clock.elapsed:.3f}")
    assert worst <= 1e-12
    assert clock.elapsed < 1.0


@pytest.mark.acceptance(2, "mode identity and eigenvalue trichotomy")
def test_02_mode_identity(record_property):
    clock = Clock()
    rng = np.random.default_rng(2024)
    counts = {"hyperbolic": 0, "nilpotent": 0, "elliptic": 0}
    worst = 0.0
    for case in range(100):
        xi = int(rng.integers(1, 5))
        nu = float(rng.uniform(0.2, 3.0))
        khat = float(rng.uniform(-1.0, 1.0))
        K = KernelSpec.from_coeffs(1, {(xi,): khat})
        k = wavenumber_sq((xi,))
        if case % 10 == 0 and khat < 0:
            gamma = nu**2 * k / abs(khat)  # on the threshold
        else:
            gamma = float(rng.uniform(0.0, 4.0)) * nu**2 * k
        mode = mode_matrix(ModelParams(nu, gamma, K), (xi,))
        M, s = mode.matrix, mode.sigma
        # exact product of the stored entries, so only sigma's own rounding counts
        F = [[Fraction(float(v)) for v in row] for row in M]
        sq = [[sum(F[i][l] * F[l][j] for l in range(2)) for j in range(2)] for i in range(2)]
        err = max(abs(float(sq[i][j] - (Fraction(s) if i == j else 0))) for i in range(2) for j in range(2))
        err /= 1 + abs(s)
        worst = max(worst, err)
        assert err <= 1e-12
        ev = np.linalg.eigvals(M)
        scale = 1 + math.sqrt(abs(s))
        if abs(s) <= 1e-9 * (nu * k) ** 2:
            counts["nilpotent"] += 1
            # double eigenvalue 0, M itself nonzero; a Jordan block moves eigvals by ~sqrt(eps) |M|
            assert np.max(np.abs(ev)) <= 1e-6 * (1 + np.max(np.abs(M)))
            assert np.max(np.abs(M)) > 0
        elif s > 0:
            counts["hyperbolic"] += 1
            assert np.max(np.abs(ev.imag)) <= 1e-9 * scale
            np.testing.assert_allclose(np.sort(ev.real), [-math.sqrt(s), math.sqrt(s)], rtol=1e-9)
        else:
            counts["elliptic"] += 1
            assert np.max(np.abs(ev.real)) <= 1e-9 * scale
            np.testing.assert_allclose(np.sort(ev.imag), [-math.sqrt(-s), math.sqrt(-s)], rtol=1e-9)
        assert mode.regime() in counts
    record_property("max_identity_err", f"{worst:.2e}")
    record_property("regimes", counts)
    record_property("time_s", f"{clock.elapsed:.3f}")
    assert min(counts.values()) > 0
    assert clock.elapsed < 1.0


@pytest.mark.acceptance(3, "two-mode critical switch")
def test_03_two_mode_switch(record_property):
    clock = Clock()
    assert critical_mode(1.0, make_two_mode_kernel(0.3, 1.0)) == (1,)
    assert critical_mode(1.0, make_two_mode_kernel(0.2, 1.0)) == (2,)
    with pytest.raises(DegenerateCriticalModeError):
        critical_mode(1.0, make_two_mode_kernel(0.25, 1.0))
    record_property("modes", "0.3->1, 0.2->2, 0.25 degenerate")
    record_property("time_s", f"{clock.elapsed:.3f}")
    assert clock.elapsed < 1.0


@pytest.mark.acceptance(4, "linear BVP vs shooting oracle")
def test_04_linear_bvp(record_property):
    rng = np.random.default_rng(4)
    worst_rel = worst_bc = 0.0
    solve_time = 0.0
    cases = 0
    while cases < 50:
        xi = int(rng.integers(1, 4))
        nu = float(rng.uniform(0.3, 2.0))
        khat = float(rng.uniform(-0.5, 0.5))
        gamma = float(rng.uniform(0.0, 60.0))
        params = ModelParams(nu, gamma, KernelSpec.from_coeffs(1, {(xi,): khat}))
        mode = mode_matrix(params, (xi,))
        if mode.sigma <= 0:
            continue
        T = float(rng.uniform(0.05, 20.0)) / mode.rho
        data = ModeBvpData((xi,), complex(*rng.normal(size=2)), complex(*rng.normal(size=2)), T)
        times = np.linspace(0.0, T, 41)
        t0 = time.perf_counter()
        sol = solve_mode_bvp(params, data, times)
        solve_time += time.perf_counter() - t0
        w_ref, mu_ref = rk4_shooting(nu, wavenumber_sq((xi,)), gamma * khat, data.mu0, data.gT, T, times)
        scale = max(np.max(np.abs(w_ref)), np.max(np.abs(mu_ref)))
        worst_rel = max(worst_rel, np.max(np.abs(sol.w - w_ref)) / scale, np.max(np.abs(sol.mu - mu_ref)) / scale)
        worst_bc = max(worst_bc, abs(sol.mu[0] - data.mu0), abs(sol.w[-1] - data.gT))
        cases += 1
    params = ModelParams(1.0, 0.5 * GC, COSINE)
    t0 = time.perf_counter()
    far = solve_mode_bvp(params, ModeBvpData((1,), 1.0, 1.0, 1e4 / mode_matrix(params, (1,)).rho))
    solve_time += time.perf_counter() - t0
    record_property("max_rel_err", f"{worst_rel:.2e}")
    record_property("max_bc_residual", f"{worst_bc:.2e}")
    record_property("solver_time_s", f"{solve_time:.3f}")
    assert worst_rel <= 1e-6
    assert worst_bc <= 1e-10
    assert np.all(np.isfinite(far.w)) and np.all(np.isfinite(far.mu))
    assert solve_time < 10.0


@pytest.mark.acceptance(5, "linear turnpike rate")
def test_05_linear_rate(record_property):
    clock = Clock()
    params = ModelParams(1.0, 0.5 * GC, COSINE)
    problem = make_problem(params, 4.0, 32, nt=16)
    env = linear_turnpike_envelope(params, problem.m0, problem.g, 4.0, np.linspace(0, 4.0, 401))
    record_property("fitted_rate", f"{env.fitted_rate:.6f}")
    record_property("rho", f"{env.rho_gamma:.6f}")
    record_property("time_s", f"{clock.elapsed:.3f}")
    assert abs(env.ratio - 1.0) <= 0.02
    assert clock.elapsed < 5.0


def _relative_deviation(eps):
    params = ModelParams(1.0, 0.5 * GC, COSINE)
    problem = make_problem(params, 1.0, 16, nt=4000, epsilon=eps)
    traj = solve_mfg(problem)
    env = linear_turnpike_envelope(params, problem.m0, problem.g, 1.0, problem.times)
    m_hat, _ = spectra(traj)
    grid = spectral_grid(1, 16)
    nz = grid.nonzero
    diff = np.sqrt(np.sum(np.abs(m_hat[:, nz] - env.mu_hat[:, nz]) ** 2 / grid.k[nz], axis=1))
    return float(np.max(diff) / np.max(env.h_minus1_m))


@pytest.mark.slow
@pytest.mark.acceptance(6, "nonlinear-linear consistency")
def test_06_nonlinear_linear(record_property):
    clock = Clock()
    devs = [_relative_deviation(eps) for eps in (1e-2, 1e-3, 1e-4)]
    ratios = [devs[0] / devs[1], devs[1] / devs[2]]
    record_property("deviations", [f"{d:.3e}" for d in devs])
    record_property("ratios", [f"{r:.2f}" for r in ratios])
    record_property("time_s", f"{clock.elapsed:.1f}")
    assert all(5.0 <= r <= 20.0 for r in ratios)
    assert clock.elapsed < 300.0


@pytest.mark.slow
@pytest.mark.acceptance(7, "rate degeneration law")
def test_07_rate_degeneration(record_property):
    clock = Clock()
    fracs = [0.50, 0.70, 0.85, 0.93, 0.97]
    rates = []
    for f in fracs:
        params = ModelParams(1.0, f * GC, COSINE)
        rho = spectral_gap(params)
        problem = make_problem(params, 14.0 / rho, 32, nt=800, epsilon=1e-2)
        traj = solve_mfg(problem, SolverOptions(max_iter=2000))
        rates.append(turnpike_report(traj, params).amplitude_rate)
    gaps = np.array([GC * (1 - f) for f in fracs])
    slope = np.polyfit(np.log(gaps), np.log(rates), 1)[0]
    law = [r / (math.pi * math.sqrt(2) * math.sqrt(g)) for r, g in zip(rates, gaps)]
    record_property("slope", f"{slope:.5f}")
    record_property("ratio_to_law", [f"{v:.4f}" for v in law])
    record_property("time_s", f"{clock.elapsed:.1f}")
    assert abs(slope - 0.5) <= 0.05
    assert all(0.8 <= v <= 1.2 for v in law[-2:])
    assert clock.elapsed < 900.0


@pytest.mark.acceptance(8, "reduced-model midpoint scaling")
def test_08_reduced_scaling(record_property):
    clock = Clock()
    # cubic coefficient of the cosine-kernel normal form at nu = 1
    model = ReducedModel(7.0 * GC / 64.0)
    ms = midpoint_scaling(model, 0.5, [10, 100, 1000], dt=1e-3)
    traj = integrate_reduced(model, 0.5, 500.0, dt=1e-3, sample_every=50)
    err = traj.max_relative_error()
    record_property("exponent", f"{ms.exponent:.5f}")
    record_property("raw_loglog_slope", f"{ms.raw_slope:.4f}")
    record_property("closed_form_err", f"{err:.2e}")
    record_property("time_s", f"{clock.elapsed:.2f}")
    assert abs(ms.exponent + 0.5) <= 0.01
    assert abs(ms.raw_slope + 0.5) <= 0.01
    assert err <= 1e-8
    assert clock.elapsed < 10.0


@pytest.mark.slow
@pytest.mark.acceptance(9, "critical midpoint scaling, full solver")
def test_09_critical_full_solver(record_property):
    clock = Clock()
    ex = critical_midpoint_experiment(1.0, COSINE, 0.1, [8, 16, 32, 64], nx=16, nt_per_unit=200)
    record_property("a_mid", [f"T={r.T:g}:{r.a_mid:.4e}" for r in ex.rows])
    record_property("stable_mid", [f"{r.stable_mid:.3e}" for r in ex.rows])
    record_property("slope", None if ex.midpoint_slope is None else f"{ex.midpoint_slope:.4f}")
    record_property("stable_rate", None if ex.stable_rate is None else f"{ex.stable_rate:.4f}")
    record_property("half_c1", f"{0.5 * ex.c1:.3f}")
    record_property("failures", ex.failures)
    record_property("time_s", f"{clock.elapsed:.0f}")
    assert not ex.failures
    assert abs(ex.midpoint_slope + 0.5) <= 0.15
    assert ex.stable_rate >= 0.5 * ex.c1
    assert clock.elapsed < 1800.0


@pytest.fixture(scope="module")
def branch():
    return continue_branch(1.0, COSINE, bifurcation_schedule(GC, 1e-4, 1e-2, 8), nx=32)


@pytest.mark.acceptance(10, "bifurcation branch")
def test_10_bifurcation(record_property, branch):
    clock = Clock()
    residuals = [p.state.residual for p in branch.points]
    min_m = min(p.state.min_m for p in branch.points)
    flips = [pitchfork_check(p, ModelParams(1.0, p.gamma, COSINE)) for p in branch.points]
    sub = subcritical_probe(1.0, COSINE, 0.99, nx=32)
    record_property("points", len(branch.points))
    record_property("exponent", f"{branch.exponent:.4f}")
    record_property("max_residual", f"{max(residuals):.2e}")
    record_property("min_m", f"{min_m:.4f}")
    record_property("max_shift_residual", f"{max(f.shifted_residual for f in flips):.2e}")
    record_property("subcritical_max_mu", f"{max(sub):.1e}")
    assert not branch.failures and len(branch.points) == 8
    assert max(residuals) <= 1e-9
    assert abs(branch.exponent - 0.5) <= 0.05
    assert min_m > 0
    for f in flips:
        assert f.shifted_amplitude == pytest.approx(-f.amplitude, rel=1e-9)
        assert f.shifted_residual <= 1e-9
    assert max(sub) <= 1e-9
    assert clock.elapsed < 600.0


@pytest.mark.acceptance(11, "two-estimator beta consistency")
def test_11_beta_consistency(record_property, branch):
    clock = Clock()
    track = critical_eigen_tracking(1.0, COSINE, GC * np.linspace(0.98, 1.02, 9), nx=32)
    check = beta_cross_check(branch, track.alpha_hat)
    record_property("alpha_hat", f"{track.alpha_hat:.6f}")
    record_property("beta_hat_fit", f"{check['beta_hat_fit']:.4f}")
    record_property("spread", f"{check['relative_spread']:.4f}")
    record_property("max_dev", f"{check['max_deviation_from_fit']:.4f}")
    assert check["relative_spread"] <= 0.10
    assert check["max_deviation_from_fit"] <= 0.10
    assert clock.elapsed < 300.0


@pytest.mark.acceptance(12, "Wasserstein oracle")
def test_12_wasserstein(record_property):
    clock = Clock()
    rng = np.random.default_rng(12)
    worst = 0.0
    largest = 0.0
    for N in (1, 2, 3, 7, 20, 50, 100, 150, 200):
        for _ in range(4):
            x = rng.random(N)
            y = np.mod(rng.normal(rng.random(), 0.15, N), 1.0)
            w = w2_circle(x, y)
            worst = max(worst, abs(w - w2_circle_bruteforce(x, y)), abs(w - w2_circle_assignment(x, y)))
            largest = max(largest, w)
            assert w <= 0.5
    antipodal = w2_circle([0.1], [0.6])
    record_property("max_abs_err", f"{worst:.2e}")
    record_property("largest_w2", f"{largest:.4f}")
    record_property("antipodal", antipodal)
    record_property("time_s", f"{clock.elapsed:.2f}")
    assert worst <= 1e-9
    assert antipodal == pytest.approx(0.5, abs=1e-15)
    assert clock.elapsed < 30.0


@pytest.mark.slow
@pytest.mark.acceptance(13, "qualitative propagation of chaos")
def test_13_chaos(record_property):
    clock = Clock()
    report = chaos_experiment(1.0, 0.5 * GC, COSINE, [100, 1000, 10000], 0.2, list(range(20)),
                              nx=16, dt=1e-3, epsilon=0.2)
    stats = report.stats(0.1)
    med = [stats[N]["median"] for N in (100, 1000, 10000)]
    record_property("medians", [f"{m:.4e}" for m in med])
    record_property("time_s", f"{clock.elapsed:.0f}")
    assert med[0] > med[1] > med[2]
    assert med[0] >= 3 * med[2]
    assert clock.elapsed < 1200.0


@pytest.mark.acceptance(14, "monotone-kernel null result")
def test_14_monotone_kernel(record_property):
    clock = Clock()
    K = KernelSpec.from_coeffs(1, {(1,): 0.5, (2,): 0.0, (3,): 0.5})
    gc, crit = critical_coupling(1.0, K)
    rng = np.random.default_rng(14)
    forms = []
    for _ in range(100):
        v = rng.normal(size=16)
        forms.append(quadratic_form(K, GridField(v - v.mean(), "mean-zero")))
    rho0 = spectral_gap(ModelParams(1.0, 0.0, K))
    params = ModelParams(1.0, 1e3, K)
    m0, g = random_smooth_data(16, 0.1, seed=14)
    env = linear_turnpike_envelope(params, m0, g, 0.5, np.linspace(0.0, 0.5, 401))
    record_property("gamma_c", gc)
    record_property("min_quadratic_form", f"{min(forms):.3e}")
    record_property("rate_over_rho0", f"{env.fitted_rate / rho0:.4f}")
    record_property("time_s", f"{clock.elapsed:.2f}")
    assert gc == math.inf and crit == []
    assert min(forms) >= 0.0
    assert env.fitted_rate >= 0.9 * rho0
    assert clock.elapsed < 10.0
