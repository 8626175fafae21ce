import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from volterrajump.generator import (
    TestFunction,
    approximate_generator,
    approximate_triplet,
    apply_generator,
    check_uniform_growth,
    cutoff,
    generator_constant,
    generator_convergence_report,
    report_to_csv,
)
from volterrajump.triplet import FiniteMixture, HawkesBasis, PSDError, Triplet, check_growth

Z_PROBES = np.linspace(-1.5, 1.5, 31)[:, None]
X_PROBES = np.linspace(-2.0, 2.0, 9)[:, None]


def jumps(k=1):
    comps = [{"intensity": "1 + 0.5 * abs(x1)", "displacement": ["0.7"] + ["0"] * (k - 1)},
             {"intensity": "2", "displacement": ["-0.05"] + ["0.3"] * (k - 1)},
             {"intensity": "0.5", "displacement": ["3"] + ["0"] * (k - 1)}]
    return FiniteMixture.from_json({"components": comps}, k=k)


# ------------------------------------------------------------ test functions
@pytest.mark.parametrize("f", [TestFunction.bump(2, radius=1.5), TestFunction.polynomial_bump(2, radius=3, power=6),
                               TestFunction.cutoff_polynomial(2, quadratic=np.eye(2), inner=1, outer=2)])
def test_test_functions_vanish_outside_support(f):
    assert f.support_check() == 0.0
    assert np.isfinite(f.grad_sup) and np.isfinite(f.hess_sup) and f.grad_sup > 0


@pytest.mark.parametrize("f", [TestFunction.bump(1, radius=1.5, center=[0.2]), TestFunction.polynomial_bump(1, radius=2),
                               TestFunction.cutoff_polynomial(1, quadratic=[[1.0]], linear=[0.5], inner=0.5, outer=1.5)])
def test_analytic_derivatives_match_finite_differences(f):
    z = np.linspace(-1.4, 1.4, 57)[:, None]
    h = 1e-5
    fd1 = (f(z + h) - f(z - h)) / (2 * h)
    fd2 = (f(z + h) - 2 * f(z) + f(z - h)) / h ** 2
    np.testing.assert_allclose(f.grad(z)[:, 0], fd1, atol=1e-7)
    np.testing.assert_allclose(f.hess(z)[:, 0, 0], fd2, atol=2e-4)


def test_polynomial_bump_power_checked():
    with pytest.raises(ValueError):
        TestFunction.polynomial_bump(1, power=2)


# ---------------------------------------------------------------- generator
def test_drift_only_reduction():
    tr = Triplet(1, 1, drift=["1 + x1"])
    f = TestFunction.bump(1, radius=2)
    x, z = np.array([0.5]), np.array([0.3])
    assert apply_generator(tr, f, x, z) == pytest.approx(1.5 * f.grad(z)[0])


def test_trace_identity():
    k = 3
    tr = Triplet(1, k, diffusion=np.eye(k).astype(str).tolist())
    f = TestFunction.cutoff_polynomial(k, quadratic=np.eye(k), inner=2, outer=3)
    assert apply_generator(tr, f, np.zeros(1), np.full(k, 0.2)) == pytest.approx(k / 2)


def test_hawkes_example():
    tr = Triplet(1, 1, nu=HawkesBasis(["x1"]))
    f = TestFunction.cutoff_polynomial(1, quadratic=[[2.0]], inner=5, outer=6)
    assert apply_generator(tr, f, [3.0], [0.5]) == pytest.approx(3.0, abs=1e-12)


def test_generator_constant_formula():
    f = TestFunction.bump(1)
    assert generator_constant(1.0, f) == pytest.approx(4 * (f.grad_sup + 0.5 * f.hess_sup))


@given(arrays(float, 1, elements=st.floats(-30, 30)), arrays(float, 1, elements=st.floats(-4, 4)))
def test_generator_bound(x, z):
    tr = Triplet(1, 1, drift=["-x1 + 1"], diffusion=[["1 + abs(x1)"]], nu=jumps())
    probes = np.linspace(-40, 40, 161)[:, None]
    c_lg = check_growth(tr, "linear_growth", np.inf, probes).max_ratio
    f = TestFunction.polynomial_bump(1, radius=3)
    bound = generator_constant(c_lg, f) * (1 + np.sum(x ** 2))
    assert abs(float(apply_generator(tr, f, x, z))) <= bound


# ------------------------------------------------------------ approximation
def test_cutoff_shape():
    n = 10
    np.testing.assert_allclose(cutoff(n, [0.0, 0.1, 0.2, 1.0, 5.0, 10.0, 20.0]), [0, 0, 1, 1, 1, 0, 0])
    assert cutoff(n, 0.15) == pytest.approx(0.5)


@given(st.integers(1, 200), st.floats(0, 500))
def test_cutoff_monotone_in_level(n, t):
    assert cutoff(n + 1, t) >= cutoff(n, t) - 1e-15


def test_zero_triplet_has_empty_family():
    for n in (1, 10, 100):
        lvl = approximate_triplet(Triplet.zero(2, 2), n)
        assert lvl.parts == ()
        assert lvl.family.total_intensity(np.zeros(2)) == 0
    rows = generator_convergence_report(Triplet.zero(1, 1), TestFunction.bump(1), [2, 4], (X_PROBES, Z_PROBES))
    assert all(r.sup_error == 0.0 for r in rows)


def test_drift_atoms_forward_difference():
    tr = Triplet(1, 1, drift=["2"])
    f = TestFunction.bump(1, radius=2)
    z = Z_PROBES
    for n in (5, 50):
        lvl = approximate_triplet(tr, n)
        got = approximate_generator(lvl, f, np.zeros((1, 1)), z)
        np.testing.assert_allclose(got, n * (f(z + 2 / n) - f(z)), rtol=1e-12, atol=1e-14)


def test_diffusion_atoms_central_difference():
    tr = Triplet(1, 1, diffusion=[["1"]])
    f = TestFunction.bump(1, radius=2)
    z = Z_PROBES
    n = 200
    got = approximate_generator(approximate_triplet(tr, n), f, np.zeros((1, 1)), z)
    # finite-difference oracle for 1/2 f''
    h = 1e-3
    fd = 0.5 * (f(z + h) - 2 * f(z) + f(z - h)) / h ** 2
    np.testing.assert_allclose(got, fd, atol=1e-3)


def test_psd_failure_names_state():
    tr = Triplet(1, 1, diffusion=[["x1"]])
    with pytest.raises(PSDError, match="x="):
        approximate_triplet(tr, 4, probes=np.array([[-1.0], [1.0]]))


@given(st.integers(1, 100), arrays(float, 2, elements=st.floats(-10, 10)))
def test_zero_first_moment_of_diffusion_and_jump_parts(n, x):
    tr = Triplet(2, 2, drift=["x1", "1"], diffusion=[["2 + abs(x1)", "0.5"], ["0.5", "1"]], nu=jumps(2))
    lvl = approximate_triplet(tr, n)
    for tag in ("diffusion", "jump"):
        w, z = lvl.family.part(tag).atoms(x)
        np.testing.assert_allclose(np.einsum("m,mk->k", w, z), 0.0, atol=1e-12 * n * n)
    w, z = lvl.family.part("drift").atoms(x)
    np.testing.assert_allclose(np.einsum("m,mk->k", w, z), tr.b(x), rtol=1e-12)


@given(st.integers(1, 100), st.floats(-10, 10))
def test_second_moment_of_jump_part_bounded(n, x):
    nu = jumps()
    lvl = approximate_triplet(Triplet.pure_jump(nu, 1), n)
    xv = np.array([x])
    assert lvl.family.part("jump").moment(xv, 2).value <= 2 * nu.moment(xv, 2).value + 1e-12


@pytest.mark.parametrize("n", [1, 3, 10, 50])
def test_uniform_growth_constant_holds(n):
    tr = Triplet(1, 1, drift=["-x1"], diffusion=[["1 + abs(x1)"]], nu=jumps())
    probes = np.linspace(-20, 20, 81)[:, None]
    c_lg = check_growth(tr, "linear_growth", np.inf, probes).max_ratio
    rep = check_uniform_growth(approximate_triplet(tr, n), c_lg, probes)
    assert rep.passed


def test_convergence_report_rates_and_csv():
    f = TestFunction.polynomial_bump(1, radius=3, power=6)
    levels = [4, 8, 16, 32, 64]
    box = (X_PROBES, Z_PROBES)
    for tr, part, slope in ((Triplet(1, 1, drift=["1 + x1"]), "drift", -1.0),
                            (Triplet(1, 1, diffusion=[["1 + x1^2"]]), "diffusion", -2.0)):
        rows = [r for r in generator_convergence_report(tr, f, levels, box) if r.part == part]
        errs = np.array([r.sup_error for r in rows])
        fit = np.polyfit(np.log(levels), np.log(errs), 1)[0]
        assert abs(fit - slope) < 0.2
    csv_text = report_to_csv(rows)
    assert csv_text.splitlines()[0] == "level,part,sup_error"
    assert len(csv_text.splitlines()) == 1 + len(rows)


def test_jump_part_converges():
    tr = Triplet.pure_jump(jumps(), 1)
    f = TestFunction.polynomial_bump(1, radius=3)
    rows = [r for r in generator_convergence_report(tr, f, [4, 16, 64], (X_PROBES, Z_PROBES)) if r.part == "total"]
    errs = [r.sup_error for r in rows]
    assert errs[0] > errs[1] > errs[2]
