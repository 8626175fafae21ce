import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from volterrajump.diagnostics import (
    adjacent_cell_weight,
    holder_exponent_estimate,
    lp_norm,
    slobodeckij_seminorm,
    wasserstein1,
)

# mpmath oracles
SLOB_LINEAR = 0.480769230769230769  # X(t) = t, eta = 0.2, p = 2, T = 1
SLOB_STEP = 2.66256592310745216  # X = 1{t >= 1/2}, eta = 0.2, p = 2, T = 1


def test_lp_norm_examples():
    assert lp_norm(np.full(11, 2.0), 2, 1.0) == pytest.approx(4.0)
    t = np.linspace(0, 1, 2001)
    assert lp_norm(t, 2, 1.0) == pytest.approx(1 / 3, rel=1e-6)
    assert lp_norm(np.column_stack([t, t]), 2, 1.0) == pytest.approx(2 / 3, rel=1e-6)
    assert lp_norm(np.arange(4.0), 1, 3.0, rule="left") == pytest.approx(3.0)
    with pytest.raises(ValueError):
        lp_norm(t, 2, 1.0, rule="simpson")


def test_lp_norm_refinement_is_consistent():
    f = lambda t: np.sin(3 * t)
    vals = [lp_norm(f(np.linspace(0, 2, M + 1)), 2, 2.0) for M in (50, 100, 200)]
    exact = 1.0 - math.sin(12) / 12
    errs = np.abs(np.array(vals) - exact)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-4


def test_adjacent_cell_weight_matches_quadrature():
    from scipy import integrate
    h, eta, p = 0.1, 0.2, 2.0
    val, _ = integrate.dblquad(lambda t, s: (t - s) ** (-1 - eta * p), 0, h, h, 2 * h)
    assert adjacent_cell_weight(eta, p, h) == pytest.approx(val, rel=1e-7)


def test_slobodeckij_constant_is_zero():
    assert slobodeckij_seminorm(np.full(33, -1.5), 0.3, 3.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        slobodeckij_seminorm(np.zeros(10), 1.0, 2.0, 1.0)


def test_slobodeckij_linear_path_converges_to_oracle():
    s = {M: slobodeckij_seminorm(np.linspace(0, 1, M + 1), 0.2, 2.0, 1.0) for M in (256, 512)}
    assert abs(s[512] - SLOB_LINEAR) < abs(s[256] - SLOB_LINEAR) < 0.02
    # first-order error: one Richardson step recovers three digits
    assert 2 * s[512] - s[256] == pytest.approx(SLOB_LINEAR, rel=1e-3)


def test_slobodeckij_step_path_matches_oracle():
    M = 2048
    t = np.linspace(0, 1, M + 1)
    assert slobodeckij_seminorm((t >= 0.5).astype(float), 0.2, 2.0, 1.0) == pytest.approx(SLOB_STEP, rel=1e-3)


@given(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3), st.sampled_from([1.0, 2.0, 3.0]))
def test_slobodeckij_is_p_homogeneous(lam, p):
    v = np.sin(np.linspace(0, 4, 41))
    base = slobodeckij_seminorm(v, 0.25, p, 1.0)
    assert slobodeckij_seminorm(lam * v, 0.25, p, 1.0) == pytest.approx(abs(lam) ** p * base, rel=1e-10)


def test_holder_linear_and_step():
    t = np.linspace(0, 1, 2 ** 12 + 1)
    assert holder_exponent_estimate(t, calibrate=False).raw == pytest.approx(1.0, abs=1e-9)
    step = (t >= 0.3).astype(float)
    assert abs(holder_exponent_estimate(step, calibrate=False).raw) < 1e-9


def test_holder_brownian_calibrated():
    rng = np.random.default_rng(5)
    M = 2 ** 12
    ests = [holder_exponent_estimate(np.concatenate([[0], np.cumsum(rng.standard_normal(M))]) / math.sqrt(M))
            for _ in range(8)]
    mean = np.mean([e.exponent for e in ests])
    assert 0.4 <= mean <= 0.6
    assert all(e.offset > 0 for e in ests)
    lo, hi = ests[0].band
    assert lo < ests[0].exponent < hi


def test_holder_degenerate_inputs():
    assert holder_exponent_estimate(np.zeros(257)).exponent == math.inf
    with pytest.raises(ValueError, match="4 dyadic levels"):
        holder_exponent_estimate(np.linspace(0, 1, 9))
    with pytest.raises(ValueError):
        holder_exponent_estimate(np.linspace(0, 1, 257), levels=3)


def test_wasserstein_point_masses_and_shift():
    assert wasserstein1([0.0], [1.0]) == 1.0
    assert wasserstein1([0.0, 0.0], [1.0, 1.0, 1.0]) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(20000), rng.standard_normal(30000) + 0.5
    assert wasserstein1(a, b) == pytest.approx(0.5, abs=0.03)
    assert wasserstein1(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-9)
    with pytest.raises(ValueError):
        wasserstein1([], [1.0])


samples = st.lists(st.floats(-100, 100), min_size=1, max_size=12)


@given(samples, samples, samples)
def test_wasserstein_metric_axioms(a, b, c):
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ab >= 0 and wasserstein1(a, a) == 0.0
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-9
