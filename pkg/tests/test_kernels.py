import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import integrate

from volterrajump.diagnostics import lp_norm
from volterrajump.kernels import (
    Kernel,
    KernelDomainError,
    ResolventStepError,
    StepFunction,
    convolve,
    evaluate_kernel,
    fit_exponential_sum,
    kernel_lp_distance,
    resolvent,
    resolvent_residual,
    slobodeckij_certificate,
)

# independent high-precision oracles (mpmath, 30 digits), frozen here
K_FRAC_AT_4 = 0.707106781186547524400844362105
SECOND_INTEGRAL = 7.79974936236012566522434765924
FIT_L2_FRACTIONAL_20 = 0.150201877117858812
FIT_L2_DAMPENED = {5: 0.255641674344423, 10: 0.196705924884928, 20: 0.150101353523247, 40: 0.116415878734833}


# ---------------------------------------------------------------- evaluation
def test_fractional_gamma_one_is_constant():
    assert evaluate_kernel(Kernel.fractional(1.0), 2.0)[0, 0] == 1.0


def test_rate_zero_exponential_is_one():
    K = Kernel.exponential_sum([1.0], [0.0])
    np.testing.assert_array_equal(K.scalar(np.array([0.0, 1.0, 7.5])), 1.0)


def test_fractional_value_matches_oracle():
    assert Kernel.fractional(0.75).scalar(4.0) == pytest.approx(K_FRAC_AT_4, rel=1e-15)


def test_singular_origin_raises():
    K = Kernel.fractional(0.75)
    assert K.singular_at_zero
    with pytest.raises(KernelDomainError, match="singular"):
        evaluate_kernel(K, 0.0)
    assert evaluate_kernel(Kernel.fractional(1.25), 0.0)[0, 0] == 0.0


def test_inadmissible_gamma_rejected():
    with pytest.raises(ValueError):
        Kernel.fractional(0.5)


def test_matrix_valued_kernel_shapes():
    K = Kernel.exponential_sum([[[1.0, 0.0], [0.0, 2.0]]], [1.0])
    assert K.dims == (2, 2)
    assert K(np.array([0.5, 1.0])).shape == (2, 2, 2)
    np.testing.assert_allclose(K(1.0), np.diag([1.0, 2.0]) * math.exp(-1.0))


def test_json_roundtrip():
    for K in (Kernel.fractional(0.75, horizon=2.0), Kernel.dampened_fractional(0.8, 1.5),
              Kernel.exponential_sum([1.0, 0.5], [0.0, 3.0]), Kernel.constant([[1.0, 2.0]]),
              Kernel.lipschitz_tabulated([0.0, 0.5, 1.0], [1.0, 0.5, 0.25])):
        K2 = Kernel.from_json(K.to_json())
        assert K2.family == K.family and K2.dims == K.dims
        t = np.linspace(0.1, 2.0, 7)
        np.testing.assert_array_equal(K2(t), K(t))


def test_tabulated_lipschitz_declaration_enforced():
    with pytest.raises(ValueError):
        Kernel.lipschitz_tabulated([0.0, 1.0], [0.0, 2.0], lipschitz_const=1.0)


@pytest.mark.parametrize("K", [Kernel.fractional(0.75), Kernel.dampened_fractional(0.75, 2.0),
                               Kernel.exponential_sum([1.0, -0.5], [0.0, 3.0]),
                               Kernel.lipschitz_tabulated([0.0, 0.3, 1.0], [1.0, 0.2, 0.6])])
def test_antiderivatives_match_quadrature(K):
    u = 0.9
    I, _ = integrate.quad(lambda s: K.scalar(s), 0, u, points=[0.3], limit=200)
    Im, _ = integrate.quad(lambda s: s * K.scalar(s), 0, u, points=[0.3], limit=200)
    assert K.integral(u)[0, 0] == pytest.approx(I, rel=1e-8)
    assert K.moment_integral(u)[0, 0] == pytest.approx(Im, rel=1e-8)
    D, _ = integrate.quad(lambda r: K.integral(r)[0, 0], 0, u, limit=200)
    assert K.double_integral(u)[0, 0] == pytest.approx(D, rel=1e-8)


@given(st.floats(0.2, 5.0), st.floats(0.05, 3.0))
def test_time_scaling(factor, t):
    for K in (Kernel.fractional(0.75), Kernel.dampened_fractional(0.7, 1.0), Kernel.exponential_sum([1.0], [2.0])):
        Ks = K.time_scaled(factor, left=2.0)
        assert Ks.scalar(t) == pytest.approx(2.0 * K.scalar(t / factor), rel=1e-12)


# --------------------------------------------------------------- certificate
def test_certificate_closed_form_example():
    c = slobodeckij_certificate(Kernel.fractional(0.75), 2, 0.2, 1.0)
    assert c.method == "closed_form"
    assert c.value_singular_integral == 10.0
    assert c.value_slobodeckij_integral == pytest.approx(SECOND_INTEGRAL, rel=1e-10)
    assert c.finite


def test_certificate_quadrature_path():
    c = slobodeckij_certificate(Kernel.fractional(0.75), 2, 0.2, 1.0, method="quadrature")
    assert c.method == "quadrature"
    assert c.value_singular_integral == pytest.approx(10.0, rel=1e-6)
    assert c.value_slobodeckij_integral == pytest.approx(SECOND_INTEGRAL, rel=1e-6)
    assert c.quadrature_error_estimate >= 0


def test_divergent_certificate_is_reported_not_raised():
    c = slobodeckij_certificate(Kernel.fractional(0.75), 2, 0.3, 1.0)
    assert not c.finite
    assert math.isinf(c.value_singular_integral)
    assert "diverge" in c.diagnostic
    assert c.to_json()["value_singular_integral"] == "inf"


def test_smooth_kernel_certificate():
    # K = 1 is constant: the difference integral vanishes and the first is T^{1-eta p}/(1-eta p)
    c = slobodeckij_certificate(Kernel.constant(1.0), 2, 0.2, 2.0)
    assert c.value_singular_integral == pytest.approx(2.0 ** 0.6 / 0.6, rel=1e-12)
    assert c.value_slobodeckij_integral == 0.0


@given(gamma=st.floats(0.6, 0.95), eta_frac=st.floats(0.1, 0.85), T=st.floats(0.2, 3.0))
def test_closed_form_and_quadrature_agree(gamma, eta_frac, T):
    eta = eta_frac * (gamma - 0.5)
    K = Kernel.fractional(gamma)
    a = slobodeckij_certificate(K, 2, eta, T, method="closed_form")
    b = slobodeckij_certificate(K, 2, eta, T, method="quadrature")
    assert b.value_singular_integral == pytest.approx(a.value_singular_integral, rel=1e-6)
    assert b.value_slobodeckij_integral == pytest.approx(a.value_slobodeckij_integral, rel=1e-6)


@given(gamma=st.floats(0.6, 1.4), beta=st.floats(0.0, 3.0), eta=st.floats(0.05, 0.45),
       T1=st.floats(0.1, 2.0), dT=st.floats(0.01, 2.0))
def test_certificate_monotone_in_horizon(gamma, beta, eta, T1, dT):
    K = Kernel.dampened_fractional(gamma, beta)
    a = slobodeckij_certificate(K, 2, eta, T1)
    b = slobodeckij_certificate(K, 2, eta, T1 + dT)
    tol = 1e-9
    assert b.value_singular_integral >= a.value_singular_integral * (1 - tol)
    assert b.value_slobodeckij_integral >= a.value_slobodeckij_integral * (1 - tol)


@pytest.mark.parametrize("gamma", [0.6, 0.7, 0.8, 0.9])
@pytest.mark.parametrize("eta", [0.05, 0.15, 0.25, 0.35, 0.45])
def test_dampening_preserves_finiteness(gamma, eta):
    boundary = gamma - 0.5
    if abs(eta - boundary) < 0.02:
        pytest.skip("too close to the admissibility boundary for a quadrature verdict")
    plain = slobodeckij_certificate(Kernel.fractional(gamma), 2, eta, 1.0)
    damped = slobodeckij_certificate(Kernel.dampened_fractional(gamma, 1.0), 2, eta, 1.0)
    assert plain.finite == damped.finite == (eta < boundary)


def test_higher_p_certificate():
    # first integral closed form T^{(gamma-1-eta)p+1} / ((gamma-1-eta)p+1)
    c = slobodeckij_certificate(Kernel.fractional(0.9), 4, 0.1, 1.0, method="quadrature")
    assert c.value_singular_integral == pytest.approx(1.0 / ((0.9 - 1 - 0.1) * 4 + 1), rel=1e-6)


# ----------------------------------------------------------------- convolve
def test_convolve_identity():
    t, v = convolve(Kernel.constant(1.0), StepFunction([0.0], [1.0]), 2.0, 0.25)
    np.testing.assert_allclose(v[:, 0], t, atol=1e-15)


def test_convolve_exponential():
    t, v = convolve(Kernel.exponential_sum([1.0], [1.0]), StepFunction([0.0], [1.0]), 3.0, 0.5)
    np.testing.assert_allclose(v[:, 0], 1 - np.exp(-t), atol=1e-14)


def test_convolve_fractional_shifted_step():
    _, v = convolve(Kernel.fractional(0.75), StepFunction([1.0], [1.0]), 2.0, 0.5)
    assert v[-1, 0] == pytest.approx(4.0 / 3.0, rel=1e-14)


def test_convolve_callable_path():
    # product integration is exact for piecewise-constant paths frozen at cell midpoints
    _, v = convolve(Kernel.fractional(0.75), lambda s: np.ones_like(s), 1.0, 0.1)
    assert v[-1, 0] == pytest.approx(1 / 0.75, rel=1e-13)
    with pytest.raises(TypeError):
        convolve(Kernel.constant(1.0), 3.0, 1.0, 0.5)


@given(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(-2.0, 2.0)), min_size=1, max_size=6))
def test_young_inequality(jumps):
    # ||K * z||_r <= ||K||_p ||z||_q with 1/p + 1/q = 1/r + 1; p = q = 1.5 gives r = 3
    knots = sorted({round(t, 6) for t, _ in jumps})
    assume(len(knots) == len(jumps))
    vals = [v for _, v in sorted(jumps)]
    z = StepFunction(knots, vals)
    T, M = 1.0, 400
    K = Kernel.fractional(0.75)
    _, conv = convolve(K, z, T, T / M)
    lhs = lp_norm(conv, 3.0, T) ** (1 / 3)
    K_norm = (T ** 0.625 / 0.625) ** (1 / 1.5)
    edges = np.append(z.knots, T)
    z_norm = (np.sum(np.abs(z.values[:, 0]) ** 1.5 * np.diff(edges))) ** (1 / 1.5)
    assert lhs <= K_norm * z_norm * (1 + 1e-9) + 1e-12


# ---------------------------------------------------------------- resolvent
def test_resolvent_zero_kernel():
    tab = resolvent(0.0, 1.0, 0.01)
    assert np.all(tab.values == 0.0)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_resolvent_constant_kernel(c):
    # oracle: r' = -c r, r(0) = c, so r(t) = c exp(-c t); left-endpoint rule is first order
    errs = []
    for h in (0.01, 0.005, 0.0025):
        tab = resolvent(c, 1.0, h)
        errs.append(np.max(np.abs(tab.values - c * np.exp(-c * tab.grid))))
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8
    assert not tab.sign_check


def test_resolvent_negative_kernel():
    c = 1.5
    tab = resolvent(-c, 1.0, 0.0025)
    np.testing.assert_allclose(tab.values, -c * np.exp(c * tab.grid), rtol=0.01)
    assert tab.sign_check


def test_resolvent_step_advisory():
    with pytest.raises(ResolventStepError, match="refine"):
        resolvent(50.0, 1.0, 0.1)


@given(st.floats(0.1, 3.0), st.floats(0.0, 2.0))
def test_resolvent_residual_first_order(c, rate):
    k = lambda t: c * np.exp(-rate * t)
    r1 = resolvent_residual(resolvent(k, 1.0, 0.02))
    r2 = resolvent_residual(resolvent(k, 1.0, 0.01))
    assert r2 <= 0.6 * r1 + 1e-14


def test_resolvent_convolve_with():
    tab = resolvent(1.0, 1.0, 0.25)
    out = tab.convolve_with(np.ones(5))
    assert out[0] == 0.0
    assert out[1] == pytest.approx(0.25 * tab.values[1])


# -------------------------------------------------------------------- fits
def test_fit_idempotent_on_exponential_sums():
    K = Kernel.exponential_sum([1.0, 0.5], [0.0, 3.0])
    fit = fit_exponential_sum(K, 4, 1.0)
    assert fit.kernel is K and fit.l2_error == 0.0
    with pytest.raises(ValueError):
        fit_exponential_sum(K, 1, 1.0)


def test_fit_single_exponential_exact():
    fit = fit_exponential_sum(Kernel.exponential_sum([1.0], [1.0]), 1, 1.0)
    np.testing.assert_array_equal(fit.kernel.params["rates"], [1.0])
    assert fit.l2_error == 0.0


def test_fit_fractional_matches_oracle():
    fit = fit_exponential_sum(Kernel.fractional(0.75), 20, 1.0)
    assert len(fit.kernel.params["rates"]) == 20
    assert fit.l2_error == pytest.approx(FIT_L2_FRACTIONAL_20, rel=1e-6)


@pytest.mark.parametrize("n", sorted(FIT_L2_DAMPENED))
def test_fit_dampened_matches_oracle(n):
    fit = fit_exponential_sum(Kernel.dampened_fractional(0.75, 1.0), n, 1.0)
    assert fit.l2_error == pytest.approx(FIT_L2_DAMPENED[n], rel=1e-6)


def test_fit_unsupported_families():
    with pytest.raises(ValueError):
        fit_exponential_sum(Kernel.lipschitz_tabulated([0.0, 1.0], [1.0, 0.0]), 5, 1.0)
    with pytest.raises(ValueError):
        fit_exponential_sum(Kernel.fractional(1.25), 5, 1.0)


def test_lp_distance_symmetric_and_zero_on_self():
    a, b = Kernel.fractional(0.75), Kernel.exponential_sum([1.0], [1.0])
    assert kernel_lp_distance(a, a, 1.0) == 0.0
    assert kernel_lp_distance(a, b, 1.0) == pytest.approx(kernel_lp_distance(b, a, 1.0), rel=1e-12)
