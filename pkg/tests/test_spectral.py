import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgturnpike.spectral import (
    DegenerateCriticalModeError,
    GapClosedError,
    GridField,
    KernelSpec,
    ModelParams,
    c_star,
    critical_coupling,
    critical_mode,
    h_minus1_norm,
    interaction_energy,
    load_kernel,
    make_cosine_kernel,
    make_two_mode_kernel,
    mode_matrix,
    mode_report,
    quadratic_form,
    round_trip_error,
    save_kernel,
    sigma_xi,
    spectral_gap,
)


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_cosine_threshold(nu):
    K = make_cosine_kernel()
    gc, crit = critical_coupling(nu, K)
    assert gc == pytest.approx(8 * math.pi**2 * nu**2, rel=1e-14)
    assert crit == [((1,), (-1,))]
    assert c_star(nu, K) == pytest.approx(math.pi * math.sqrt(2), rel=1e-14)


def test_sigma_vanishes_at_threshold(cosine, gamma_c):
    assert sigma_xi(ModelParams(1.0, gamma_c, cosine), (1,)) == pytest.approx(0.0, abs=1e-9)


def test_gap_near_threshold_follows_square_root(cosine, gamma_c):
    # rho = sqrt(k (gamma_c - gamma) |K_hat|) exactly for the critical mode
    for frac in (0.9, 0.99, 0.999):
        gamma = frac * gamma_c
        rho = spectral_gap(ModelParams(1.0, gamma, cosine))
        assert rho == pytest.approx(math.pi * math.sqrt(2) * math.sqrt(gamma_c - gamma), rel=1e-10)


def test_gap_closed_returns_none(cosine, gamma_c):
    assert spectral_gap(ModelParams(1.0, 1.01 * gamma_c, cosine)) is None


def test_gap_without_coupling_is_diffusive(cosine):
    assert spectral_gap(ModelParams(1.3, 0.0, cosine)) == pytest.approx(1.3 * 4 * math.pi**2)


@pytest.mark.parametrize(
    "ratio, expected",
    [(1 / 3, (1,)), (0.3, (1,)), (0.2, (2,)), (1 / 5, (2,))],
)
def test_two_mode_switch(ratio, expected):
    assert critical_mode(1.0, make_two_mode_kernel(ratio, 1.0)) == expected


def test_two_mode_degenerate_at_quarter():
    K = make_two_mode_kernel(0.25, 1.0)
    assert len(critical_coupling(1.0, K).critical_set) == 2
    with pytest.raises(DegenerateCriticalModeError):
        critical_mode(1.0, K)


def test_two_dimensional_cosine():
    K = make_cosine_kernel(2)
    gc, crit = critical_coupling(1.0, K)
    assert gc == pytest.approx(8 * math.pi**2)
    assert crit == [((1, 0), (-1, 0))]


def test_monotone_kernel_has_no_threshold():
    K = KernelSpec.from_coeffs(1, {(1,): 0.5, (3,): 0.0})
    assert K.is_monotone()
    assert critical_coupling(1.0, K).gamma_c == math.inf
    with pytest.raises(GapClosedError):
        critical_mode(1.0, K)


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec(1, {(1,): -0.5})
    with pytest.raises(ValueError):
        KernelSpec.from_coeffs(1, {(0,): 1.0})
    with pytest.raises(ValueError):
        KernelSpec.from_coeffs(1, {(1,): math.nan})


def test_kernel_roundtrip(tmp_path):
    K = make_two_mode_kernel(0.4, 1.2)
    save_kernel(K, tmp_path / "k.json")
    assert load_kernel(tmp_path / "k.json") == K


def test_mode_report_summary(half_critical):
    rep = mode_report(half_critical, mode_cutoff=4)
    s = rep.summary()
    assert s["gamma_c"] == pytest.approx(8 * math.pi**2)
    assert rep.xi0 == (1,)
    assert len(rep.csv_rows()) == 8
    assert rep.rho_gamma == pytest.approx(spectral_gap(half_critical))


@settings(max_examples=100, deadline=None)
@given(
    nu=st.floats(0.1, 3.0),
    gamma=st.floats(0.0, 500.0),
    khat=st.floats(-1.0, 1.0),
    xi=st.integers(1, 6),
)
def test_mode_matrix_squares_to_sigma(nu, gamma, khat, xi):
    K = KernelSpec.from_coeffs(1, {(xi,): khat})
    mode = mode_matrix(ModelParams(nu, gamma, K), (xi,))
    M = mode.matrix
    err = np.max(np.abs(M @ M - mode.sigma * np.eye(2)))
    assert err <= 1e-12 * (1 + abs(mode.sigma))
    assert mode.trace == 0.0
    ev = np.sort_complex(np.linalg.eigvals(M))
    np.testing.assert_allclose(ev, np.sort_complex(mode.eigenvalues()), atol=1e-8 * (1 + math.sqrt(abs(mode.sigma))))


def test_regimes():
    K = make_cosine_kernel()
    gc = 8 * math.pi**2
    assert mode_matrix(ModelParams(1.0, 0.5 * gc, K), (1,)).regime() == "hyperbolic"
    assert mode_matrix(ModelParams(1.0, 2.0 * gc, K), (1,)).regime() == "elliptic"


def test_norms_of_single_cosine():
    f = GridField.from_function(lambda x: np.cos(2 * np.pi * x), 32, kind="mean-zero")
    assert h_minus1_norm(f) == pytest.approx(1 / math.sqrt(8 * math.pi**2))
    assert f.grad_l2_norm() == pytest.approx(math.sqrt(2) * math.pi)
    assert f.l2_norm() == pytest.approx(1 / math.sqrt(2))
    assert quadratic_form(make_cosine_kernel(), f) == pytest.approx(-0.25)
    assert interaction_energy(make_cosine_kernel(), 2.0, f) == pytest.approx(-0.25)


def test_field_kinds():
    with pytest.raises(ValueError):
        GridField(np.full(8, 2.0), "density")
    with pytest.raises(ValueError):
        GridField(np.ones(8), "mean-zero")
    with pytest.raises(ValueError):
        GridField(np.ones(7))
    with pytest.raises(ValueError):
        h_minus1_norm(GridField(np.ones(8)))


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(-1.0, 1.0), seed=st.integers(0, 2**16))
def test_shift_is_translation(tau, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3) + 1j * rng.normal(size=3)

    def f(x):
        return sum((c[j] * np.exp(2j * np.pi * (j + 1) * x)).real for j in range(3))

    n = 16
    shifted = GridField.from_function(f, n).shift(tau)
    x = np.arange(n) / n
    np.testing.assert_allclose(shifted.values, f(x + tau), atol=1e-12)


def test_round_trip(rng):
    f = GridField(rng.normal(size=(8, 8)))
    assert round_trip_error(f) < 1e-13
