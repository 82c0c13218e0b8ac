import math

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ricci2d.geometry import (
    ChartGrid,
    SphereGrid,
    curvature,
    hyperbolic_factor,
    hyperbolic_volume,
    radial_hyperbolic_factor,
    round_background,
)


# hyperbolic factor ----------------------------------------------------------


def test_hyperbolic_factor_at_origin_unit_disc_is_four():
    # [PAPER] lower bound 4/R² is attained at the centre, R = 1
    assert hyperbolic_factor(1.0, [0.0, 0.0]) == pytest.approx(4.0)


def test_hyperbolic_factor_trivial_values():
    assert hyperbolic_factor(2.0, [0.0, 0.0]) == pytest.approx(1.0)
    x = np.array([1.0, 1.0]) / 2.0  # |x| = 1/√2
    assert hyperbolic_factor(1.0, x) == pytest.approx(16.0)


def test_hyperbolic_factor_outside_rejected():
    with pytest.raises(ValueError):
        hyperbolic_factor(1.0, [1.0, 0.0])
    with pytest.raises(ValueError):
        radial_hyperbolic_factor(2.0, 2.5)


@pytest.mark.parametrize("R", [0.5, 1.0, 3.0, 12.0])
def test_hyperbolic_factor_lower_bound_on_grid(R):
    g = ChartGrid(R, 64)
    h = g.hyperbolic()[g.inside]
    assert np.all(h >= 4.0 / R**2 * (1 - 1e-14))


def test_hyperbolic_metric_has_curvature_minus_one_symbolically():
    x, y, R = sy.symbols("x y R", positive=True)
    h = (2 * R / (R**2 - x**2 - y**2)) ** 2
    lap = sy.diff(sy.log(h), x, 2) + sy.diff(sy.log(h), y, 2)
    assert sy.simplify(-lap / (2 * h) + 1) == 0


def test_round_background_curvature_plus_one_symbolically():
    x, y = sy.symbols("x y", real=True)
    g0 = 4 / (1 + x**2 + y**2) ** 2
    lap = sy.diff(sy.log(g0), x, 2) + sy.diff(sy.log(g0), y, 2)
    assert sy.simplify(-lap / (2 * g0) - 1) == 0


# hyperbolic volume ------------------------------------------------------------


def _quad_volume(r, R):
    val, _ = integrate.quad(lambda s: 2 * math.pi * s * (2 * R / (R * R - s * s)) ** 2, 0, r, epsabs=0, epsrel=1e-12)
    return val


@pytest.mark.parametrize("q", [0.1 * k for k in range(1, 10)])
@pytest.mark.parametrize("R", [1.0, 2.5])
def test_hyperbolic_volume_matches_quadrature(q, R):
    # [DERIVED] independent radial quadrature of h_R
    r = q * R
    assert hyperbolic_volume(r, R) == pytest.approx(_quad_volume(r, R), rel=1e-6)


def test_hyperbolic_volume_examples():
    assert hyperbolic_volume(0.0, 1.0) == 0.0
    for R in (0.3, 1.0, 7.0):
        assert hyperbolic_volume(R / math.sqrt(2), R) == pytest.approx(4 * math.pi)
    assert hyperbolic_volume(1.0, 2.0) == pytest.approx(4 * math.pi / 3)
    assert hyperbolic_volume(1.0, 2.0) == pytest.approx(4.18879, abs=1e-5)


def test_hyperbolic_volume_domain():
    with pytest.raises(ValueError):
        hyperbolic_volume(1.0, 1.0)
    with pytest.raises(ValueError):
        hyperbolic_volume(-0.1, 1.0)


# round background ----------------------------------------------------------------


def test_round_background_values():
    assert round_background([0.0, 0.0]) == pytest.approx(4.0)
    big = np.array([1e3, 0.0])
    assert round_background(big) * 1e12 / 4 == pytest.approx(1.0, rel=1e-5)


def test_round_background_total_is_sphere_area():
    # [DERIVED] radial quadrature on [0, ∞)
    val, _ = integrate.quad(lambda s: 2 * math.pi * s * 4 / (1 + s * s) ** 2, 0, np.inf)
    assert val == pytest.approx(4 * math.pi, rel=1e-10)


# grids ------------------------------------------------------------------------------


def test_chart_grid_nodes_and_partition():
    g = ChartGrid(2.0, 40)
    assert g.dx == pytest.approx(0.1)
    assert np.all(np.abs(g.coords) < g.R)
    assert not np.any(g.active & g.collar)
    assert np.array_equal(g.active | g.collar, g.inside)
    assert g.collar_width >= 2 * g.dx


def test_chart_grid_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ChartGrid(0.0, 10)
    with pytest.raises(ValueError):
        ChartGrid(1.0, 2)


def test_chart_integrate_constant_is_disc_area():
    g = ChartGrid(1.0, 512)
    assert g.integrate(np.ones((g.n, g.n))) == pytest.approx(math.pi, rel=5 * g.dx)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_stencil_reproduces_five_point_laplacian(seed):
    g = ChartGrid(1.0, 24)
    F = np.random.default_rng(seed).normal(size=(g.n, g.n))
    A, B = g.stencil
    lap = A @ F[g.active] + B @ F[g.collar]
    assert np.allclose(lap, g.laplacian(F)[g.active], rtol=1e-12, atol=1e-9)


def test_laplacian_of_quadratic_is_exact():
    g = ChartGrid(1.0, 32)
    lap = g.laplacian(g.r**2)
    assert np.allclose(lap[1:-1, 1:-1], 4.0, rtol=1e-10)


def test_restriction_between_nested_grids():
    small, big = ChartGrid(4.0, 80), ChartGrid(6.0, 120)
    assert small.shares_nodes_with(big)
    F = big.X + 2 * big.Y
    assert np.allclose(small.restrict_from(big, F), small.X + 2 * small.Y)
    with pytest.raises(ValueError):
        small.restrict_from(ChartGrid(6.0, 100), np.zeros((100, 100)))


def test_sphere_grid_quadrature_exact_to_degree_2L():
    g = SphereGrid(8)
    z = g.unit_vectors[..., 2]
    assert g.integrate(np.ones(g.shape)) == pytest.approx(4 * math.pi, rel=1e-14)
    # [DERIVED] ∫ z^{2k} over S² = 4π/(2k+1)
    for k in range(0, 9):
        assert g.integrate(z ** (2 * k)) == pytest.approx(4 * math.pi / (2 * k + 1), rel=1e-12)


# curvature ---------------------------------------------------------------------------


def test_curvature_flat_and_round():
    g = ChartGrid(1.0, 32)
    K = curvature(np.ones((g.n, g.n)), g)
    assert np.nanmax(np.abs(K[g.active])) < 1e-10
    s = SphereGrid(12)
    for c in (0.5, 1.0, 3.0):
        assert np.allclose(curvature(np.full(s.shape, c), s), 1.0 / c, rtol=1e-10)


def test_curvature_rejects_nonpositive():
    s = SphereGrid(4)
    with pytest.raises(ValueError):
        curvature(np.zeros(s.shape), s)
    g = ChartGrid(1.0, 16)
    with pytest.raises(ValueError):
        curvature(-np.ones((16, 16)), g)


def test_big_bang_curvature_converges_at_first_order_or_better():
    # [DERIVED] K(2t h_R) = -1/(2t); measure on B_{0.8R}
    t = 0.3
    errs = []
    for n in (64, 128, 256):
        g = ChartGrid(1.0, n)
        u = 2 * t * g.hyperbolic()
        K = curvature(u, g)
        m = g.ball(0.8) & g.active
        errs.append(np.max(np.abs(K[m] + 1 / (2 * t))))
    assert errs[0] < 0.05
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(order >= 1.0)
