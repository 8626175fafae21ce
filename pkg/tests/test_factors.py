import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterrajump.engine import EulerCoefficients, JumpPath, simulate_euler_batch, simulate_pure_jump
from volterrajump.factors import (
    FactorSystem,
    factor_convergence_experiment,
    factor_paths_from_increments,
    factor_paths_from_jumps,
    simulate_factor_system,
)
from volterrajump.kernels import Kernel
from volterrajump.rng import GridSpec, SeedSpec
from volterrajump.triplet import FiniteMixture, Triplet


def jump_path(times, sizes, T=1.0, **kw):
    return JumpPath(np.asarray(times, float), np.asarray(sizes, float).reshape(-1, 1), T, **kw)


def test_zero_rate_factor_is_left_continuous_running_sum():
    K = Kernel.exponential_sum([1.0], [0.0])
    path = jump_path([0.25, 0.5, 0.8], [1.0, -2.0, 0.5])
    grid = np.linspace(0.0, 1.0, 21)
    Y = factor_paths_from_jumps(K, path, grid)[:, 0, 0]
    expected = [sum(J for s, J in zip(path.times, path.jumps[:, 0]) if s < t) for t in grid]
    np.testing.assert_allclose(Y, expected, atol=1e-15)


def test_single_jump_decays_exponentially():
    K = Kernel.exponential_sum([1.0], [3.0])
    grid = np.linspace(0.0, 1.0, 11)
    Y = factor_paths_from_jumps(K, jump_path([0.2], [1.0]), grid)[:, 0, 0]
    np.testing.assert_allclose(Y, np.where(grid > 0.2, np.exp(-3.0 * (grid - 0.2)), 0.0), atol=1e-15)


def test_constant_drift_cell_has_exact_exponential_integral():
    K = Kernel.exponential_sum([1.0, 1.0], [2.0, 0.0])
    path = jump_path([], [], cell_edges=np.array([0.0, 1.0]), cell_rates=np.array([[0.7]]))
    grid = np.linspace(0.0, 1.0, 6)
    Y = factor_paths_from_jumps(K, path, grid)
    np.testing.assert_allclose(Y[:, 0, 0], 0.7 * (1 - np.exp(-2.0 * grid)) / 2.0, atol=1e-15)
    np.testing.assert_allclose(Y[:, 1, 0], 0.7 * grid, atol=1e-15)


def test_increment_recursion():
    K = Kernel.exponential_sum([1.0, 2.0], [0.0, 5.0])
    np.testing.assert_array_equal(factor_paths_from_increments(K, np.zeros((10, 1)), 0.1), 0.0)
    inc = np.random.default_rng(0).standard_normal((10, 1))
    Y = factor_paths_from_increments(K, inc, 0.1)
    np.testing.assert_allclose(Y[1:, 0, 0], np.cumsum(inc[:, 0]), atol=1e-13)
    # one increment in the first cell then pure decay
    one = np.zeros((10, 1))
    one[0] = 1.0
    Y = factor_paths_from_increments(K, one, 0.1)[:, 1, 0]
    gain = (1 - math.exp(-0.5)) / 0.5
    np.testing.assert_allclose(Y[1:], gain * np.exp(-0.5 * np.arange(10)), rtol=1e-13)


@settings(max_examples=20)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(-3, 3)), min_size=1, max_size=8),
       st.floats(0.1, 10.0))
def test_factor_paths_are_linear_in_the_driver(events, scale):
    K = Kernel.exponential_sum([1.0, 0.5], [0.5, 4.0])
    events.sort()
    t, j = zip(*events)
    grid = np.linspace(0, 1, 17)
    Y = factor_paths_from_jumps(K, jump_path(t, j), grid)
    Y2 = factor_paths_from_jumps(K, jump_path(t, scale * np.array(j)), grid)
    np.testing.assert_allclose(Y2, scale * Y, atol=1e-12 * scale)
    fs = FactorSystem(K.params["rates"], 2.0 * K.params["coeffs"], Y)
    base = FactorSystem(K.params["rates"], K.params["coeffs"], Y)
    g = np.full((17, 1), 0.3)
    np.testing.assert_allclose(fs.reconstruct(g) - g, 2.0 * (base.reconstruct(g) - g), atol=1e-12)


def test_non_exponential_kernel_rejected():
    with pytest.raises(TypeError, match="exponential-sum"):
        factor_paths_from_increments(Kernel.fractional(0.75), np.zeros((3, 1)), 0.1)
    with pytest.raises(TypeError):
        simulate_factor_system(0.0, Kernel.fractional(0.75), Triplet(1, 1, drift=["1"]), 1.0, 10, SeedSpec(1))


def test_jump_scheme_matches_direct_convolution():
    fam = FiniteMixture.from_json({"components": [{"intensity": "2", "displacement": ["1"]}]}, 1)
    K = Kernel.exponential_sum([1.0, 0.5], [0.0, 3.0])
    for i in range(5):
        fs = simulate_factor_system(0.3, K, Triplet.pure_jump(fam, 1), 5.0, 100, SeedSpec(1, i), scheme="jump")
        direct = simulate_pure_jump(0.3, K, fam, 5.0, 100, SeedSpec(1, i))
        np.testing.assert_allclose(fs.solution.X, direct.X, atol=1e-10)
        np.testing.assert_allclose(fs.solution.X, fs.solution.reconstruct(), atol=1e-10)


def test_euler_scheme_matches_batch_route():
    K = Kernel.exponential_sum([1.0, 0.5], [1.0, 3.0])
    tr = Triplet(1, 1, drift=["-x1"], diffusion=[["0.3*x1^2+0.1"]])
    grid = GridSpec(1.0, 100)
    for i in range(3):
        fs = simulate_factor_system(1.0, K, tr, 1.0, grid, SeedSpec(2, i))
        X = simulate_euler_batch(1.0, K, EulerCoefficients.from_triplet(tr), grid, [SeedSpec(2, i)])[0]
        np.testing.assert_allclose(fs.solution.X, X, atol=1e-10)


def test_factor_and_direct_convolution_euler_agree(monkeypatch):
    K = Kernel.exponential_sum([[[1.0]], [[0.5]]], [1.0, 3.0])
    tr = Triplet(1, 1, drift=["-x1"], diffusion=[["0.3*x1^2+0.1"]])
    co = EulerCoefficients.from_triplet(tr)
    grid = GridSpec(1.0, 100)
    sd = [SeedSpec(2, i) for i in range(5)]
    Xf = simulate_euler_batch(1.0, K, co, grid, sd)
    monkeypatch.setattr(Kernel, "is_exponential_sum", property(lambda self: False))
    Xd = simulate_euler_batch(1.0, K, co, grid, sd)
    assert np.max(np.abs(Xf - Xd)) <= 1e-10


def test_jump_scheme_needs_level_for_diffusive_triplet():
    K = Kernel.exponential_sum([1.0], [1.0])
    tr = Triplet(1, 1, drift=["-x1"], diffusion=[["1"]])
    with pytest.raises(ValueError, match="level"):
        simulate_factor_system(0.0, K, tr, 1.0, 10, SeedSpec(1), scheme="jump")
    fs = simulate_factor_system(0.0, K, tr, 1.0, 10, SeedSpec(1), scheme="jump", level=5)
    np.testing.assert_allclose(fs.solution.X, fs.solution.reconstruct(), atol=1e-10)


def test_convergence_experiment_smoke():
    tr = Triplet(1, 1, drift=["-x1"], diffusion=[["1"]])
    rep = factor_convergence_experiment(Kernel.dampened_fractional(0.75, 1.0), tr, [5, 20], 1.0, 40, 3,
                                        g0=1.0, steps=50, checkpoints=[0.5, 1.0])
    errs = rep.kernel_errors()
    np.testing.assert_allclose(errs, [0.255641674344423, 0.150101353523247], rtol=1e-6)
    assert rep.path_gaps()[1] < rep.path_gaps()[0]
    lines = rep.to_csv().splitlines()
    assert lines[0] == ("level,kernel_l2_error,path_gap,mean_gap_t0.5,variance_gap_t0.5,"
                        "mean_gap_t1,variance_gap_t1,certificate_finite,skipped")
    assert len(lines) == 3
