import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci2d.geometry import SphereGrid
from ricci2d.semilinear import (
    SemilinearError,
    build_sub_super,
    defects,
    green_constant,
    kazdan_warner_solve,
    lp_norm,
)


@pytest.fixture(scope="module")
def grid():
    return SphereGrid(16)


def cos_profile(grid, a=1.0):
    z = grid.unit_vectors[..., 2]
    return -a * (1 + z)


def test_green_constant_series():
    # [DERIVED] partial sums of Σ (2l+1)/(4π (l(l+1))²) converge
    assert green_constant(1) == pytest.approx(math.sqrt(3 / (4 * math.pi) / 4))
    vals = [green_constant(L) for L in (8, 16, 32, 64)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] - vals[-2] < 1e-3


def test_lp_norm_of_constant(grid):
    assert lp_norm(np.full(grid.shape, 2.0), grid, 2) == pytest.approx(2 * math.sqrt(4 * math.pi))
    assert lp_norm(np.full(grid.shape, 2.0), grid, 1) == pytest.approx(8 * math.pi)


def test_pair_for_zero_source(grid):
    f = np.zeros(grid.shape)
    pair = build_sub_super(f, grid)
    assert np.allclose(pair.upper, 0.0, atol=1e-13)
    assert pair.alpha == pytest.approx(1.0)
    assert pair.lam == pytest.approx(0.0, abs=1e-13)
    assert np.allclose(pair.lower, -2 * pair.C, atol=1e-13)
    chk = pair.check(f, grid)
    assert chk["ordered"] and chk["lower_ok"] and chk["upper_ok"] and chk["bounded"]


@pytest.mark.parametrize("c", [0.3, 1.0, 2.5])
def test_pair_brackets_constant_solution(grid, c):
    f = np.full(grid.shape, -c)
    pair = build_sub_super(f, grid)
    assert np.allclose(pair.upper, 0.0, atol=1e-12)
    assert pair.alpha == pytest.approx(math.exp(-c))
    assert np.all(pair.lower <= -c) and np.all(-c <= pair.upper)
    sol = kazdan_warner_solve(f, grid)
    assert np.allclose(sol.w, -c, atol=1e-9)
    assert sol.residual <= 1e-8


def test_defect_signs_for_nonconstant_source(grid):
    f = cos_profile(grid)
    pair = build_sub_super(f, grid)
    # Δ₀u₋ + 1 − e^{u₋−f} ≥ 0 and Δ₀u₊ + 1 − e^{u₊−f} ≤ 0
    assert np.min(defects(pair.lower, f, grid)) >= -1e-10
    assert np.max(defects(pair.upper, f, grid)) <= 1e-10
    chk = pair.check(f, grid)
    assert all(chk[k] for k in ("ordered", "lower_ok", "upper_ok", "bounded"))


def test_positive_source_rejected(grid):
    f = np.zeros(grid.shape)
    f[0, 0] = 0.1
    with pytest.raises(ValueError):
        build_sub_super(f, grid)
    with pytest.raises(ValueError):
        kazdan_warner_solve(f, grid)
    with pytest.raises(ValueError):
        kazdan_warner_solve(np.zeros(grid.shape), grid, method="secant")


@pytest.mark.parametrize("method", ["newton", "picard"])
def test_solution_meets_residual_and_bounds(grid, method):
    f = cos_profile(grid, 0.8)
    sol = kazdan_warner_solve(f, grid, method=method)
    assert sol.residual <= 1e-8
    assert sol.within_bounds
    assert sol.monotone
    assert np.max(np.abs(sol.w)) <= sol.pair.C + np.max(np.abs(sol.pair.upper)) + 1e-12


def test_methods_agree(grid):
    f = cos_profile(grid, 0.8)
    a = kazdan_warner_solve(f, grid, method="newton").w
    b = kazdan_warner_solve(f, grid, method="picard").w
    assert np.allclose(a, b, atol=1e-8)


def test_picard_sandwich_is_monotone(grid):
    f = cos_profile(grid, 0.5)
    sol = kazdan_warner_solve(f, grid, method="picard")
    gaps = [g for _, g in sol.history]
    assert np.all(np.diff(gaps) <= 1e-12)
    assert gaps[-1] >= -1e-12


@settings(max_examples=6, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_random_low_degree_sources(a, bx, by):
    g = SphereGrid(12)
    n = g.unit_vectors
    raw = a * (bx * n[..., 0] + by * n[..., 1] + n[..., 2] * n[..., 0])
    f = raw - np.max(raw)
    sol = kazdan_warner_solve(f, g)
    assert sol.residual <= 1e-8
    assert sol.within_bounds


def test_residual_improves_with_band_limit():
    # evaluate each solution against the analytic source on a fine grid
    fine = SphereGrid(64)
    z_f = fine.unit_vectors[..., 2]
    f_fine = -2.0 * (1 + z_f) ** 2
    res = []
    for L in (8, 16, 32):
        g = SphereGrid(L)
        z = g.unit_vectors[..., 2]
        w = kazdan_warner_solve(-2.0 * (1 + z) ** 2, g).w
        a = g.transform.analysis(w)
        A = np.zeros((fine.L + 1, fine.L + 1), dtype=complex)
        A[: L + 1, : L + 1] = a
        res.append(float(np.max(np.abs(defects(fine.transform.synthesis(A), f_fine, fine)))))
    assert res[0] > res[1] > res[2]


def test_failure_carries_history(grid):
    with pytest.raises(SemilinearError) as exc:
        kazdan_warner_solve(cos_profile(grid, 3.0), grid, method="picard", max_iter=3)
    assert len(exc.value.history) == 3
