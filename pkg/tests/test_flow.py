import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci2d.flow import (
    BoundaryMode,
    Extinction,
    FlowState,
    NoFlowError,
    Trajectory,
    evolve,
    make_schedule,
    maximal_time,
    run_exhaustion,
    run_from_measure,
    step_disc,
    step_sphere,
)
from ricci2d.geometry import ChartGrid, SphereGrid, SurfaceKind
from ricci2d.measure import MeasureSpec

PLANE, DISC, SPHERE = SurfaceKind.PLANE, SurfaceKind.DISC, SurfaceKind.SPHERE


def big_bang_state(R, n, t, surface=DISC):
    g = ChartGrid(R, n)
    u = np.where(g.inside, 2 * t * g.hyperbolic(), np.nan)
    return FlowState(surface, g, u, t)


def smooth_disc_state(n=48, t=0.1):
    g = ChartGrid(1.0, n)
    u = 2 * t * g.hyperbolic() * (1 + 0.3 * np.exp(-8 * g.r**2) * np.cos(g.X * 3))
    return FlowState(DISC, g, np.where(g.inside, u, np.nan), t)


# maximal time ---------------------------------------------------------------------


def test_maximal_time_trichotomy():
    m = MeasureSpec.round(4 * math.pi, PLANE)
    assert maximal_time(MeasureSpec.gaussian(DISC, 5.0, 0.2)) == math.inf
    # [PAPER] mass/4π on the plane, mass/8π on the sphere
    assert maximal_time(m) == pytest.approx(1.0, rel=1e-8)
    assert maximal_time(MeasureSpec.round(4 * math.pi)) == pytest.approx(0.5, rel=1e-10)
    assert maximal_time(MeasureSpec.trivial(PLANE)) == 0.0


def test_empty_plane_has_no_flow():
    with pytest.raises(NoFlowError, match="T = 0"):
        run_from_measure(MeasureSpec.trivial(PLANE), R=4.0, n=32)


def test_run_past_maximal_time_rejected():
    with pytest.raises(ValueError):
        run_from_measure(MeasureSpec.round(4 * math.pi), L=8, t_end=0.6)


# chart stepping ------------------------------------------------------------------------


def test_state_validation():
    g = ChartGrid(1.0, 16)
    with pytest.raises(ValueError):
        FlowState(DISC, g, np.zeros((16, 16)), 0.1)
    with pytest.raises(ValueError):
        FlowState(DISC, g, np.ones((16, 16)), -1.0)
    st_ = FlowState(DISC, g, np.ones((16, 16)), 0.1)
    with pytest.raises(ValueError):
        step_disc(st_, 0.0)
    with pytest.raises(TypeError):
        step_disc(FlowState(SPHERE, SphereGrid(4), np.ones(SphereGrid(4).shape), 0.1), 0.1)


@pytest.mark.parametrize("n", [32, 64])
def test_big_bang_step_is_reproduced(n):
    # [DERIVED] lap log(2t h_R) = 2 h_R = d/dt(2t h_R)
    s = big_bang_state(1.0, n, 0.2)
    out = step_disc(s, 0.05)
    g = s.grid
    exact = 2 * 0.25 * g.hyperbolic()
    m = g.ball(0.8) & g.active
    err = np.max(np.abs(out.u[m] / exact[m] - 1))
    assert err <= 5 * g.dx**2
    assert out.diagnostics.residual <= 1e-9
    assert out.t == pytest.approx(0.25)


def test_big_bang_error_shrinks_with_grid():
    errs = []
    for n in (32, 64, 128):
        s = big_bang_state(1.0, n, 0.2)
        out = step_disc(s, 0.1)
        m = s.grid.ball(0.8) & s.grid.active
        errs.append(np.max(np.abs(out.u[m] / (0.6 * s.grid.hyperbolic()[m]) - 1)))
    assert errs[0] > errs[1] > errs[2]


def test_tiny_step_is_consistent():
    s = smooth_disc_state()
    m = s.grid.inside
    diffs = [np.max(np.abs(step_disc(s, dt).u[m] - s.u[m])) for dt in (1e-3, 1e-4, 1e-5)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-3 * np.max(s.u[m])


def test_half_steps_agree_to_second_order():
    # [DERIVED] Richardson: one step vs two half steps differ by O(dt²)
    s = smooth_disc_state()
    m = s.grid.inside
    gaps = []
    # dt must resolve the stiff interior modes before the asymptotic rate shows
    for dt in (0.002, 0.001, 0.0005):
        one = step_disc(s, dt).u
        two = step_disc(step_disc(s, dt / 2), dt / 2).u
        gaps.append(np.max(np.abs(one - two)[m]))
    rates = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(rates > 1.7)


def test_step_preserves_order():
    a = smooth_disc_state()
    g = a.grid
    b = FlowState(DISC, g, a.u * (1 + 0.2 * np.exp(-g.r**2)), a.t)
    for dt in (0.01, 0.05):
        ua, ub = step_disc(a, dt).u, step_disc(b, dt).u
        assert np.all(ua[g.inside] <= ub[g.inside] * (1 + 1e-10))


@settings(max_examples=8, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(1e-3, 0.2))
def test_step_keeps_positivity_and_lower_barrier(t, dt):
    g = ChartGrid(1.0, 24)
    u = np.where(g.inside, 2 * t * g.hyperbolic() + 0.5 * np.exp(-10 * g.r**2), np.nan)
    out = step_disc(FlowState(DISC, g, u, t), dt)
    assert np.all(out.u[g.inside] > 0)
    assert np.all(out.u[g.inside] >= 2 * (t + dt) * g.hyperbolic()[g.inside] * (1 - 1e-2))


def test_geodesic_mode_chart_area_drops_at_four_pi():
    mu = MeasureSpec.gaussian(PLANE, 4 * math.pi, 0.5)
    tr = run_from_measure(mu, R=6.0, n=96, h=0.05, delta=0.0, t_end=0.3, dt=0.05, ratio=None, mode="geodesic")
    a = tr.area()
    slope = np.diff(a) / np.diff(tr.times)
    assert np.allclose(slope, -4 * math.pi, rtol=1e-6)


# sphere stepping ------------------------------------------------------------------------


@pytest.mark.parametrize("c,dt", [(1.0, 0.01), (0.3, 0.05), (2.0, 0.2)])
def test_constant_sphere_state_drops_by_two_dt(c, dt):
    g = SphereGrid(8)
    out = step_sphere(FlowState(SPHERE, g, np.full(g.shape, c), 0.0), dt)
    # exact up to the Newton tolerance
    assert np.allclose(out.u, c - 2 * dt, rtol=0, atol=1e-10)


def test_constant_sphere_state_at_threshold():
    g = SphereGrid(8)
    dt = 0.01
    out = step_sphere(FlowState(SPHERE, g, np.full(g.shape, 4 * dt), 0.0), dt)
    assert np.allclose(out.u, 2 * dt, atol=1e-10)
    with pytest.raises(Extinction):
        step_sphere(out, dt)


def test_sphere_area_drops_by_eight_pi_dt():
    g = SphereGrid(16)
    n = g.unit_vectors
    u = 1.0 + 0.3 * n[..., 2] + 0.2 * n[..., 0] * n[..., 1]
    s = FlowState(SPHERE, g, u, 0.0)
    for dt in (0.001, 0.01, 0.03):
        out = step_sphere(s, dt)
        assert out.area() - s.area() == pytest.approx(-8 * math.pi * dt, abs=1e-6)


def test_round_sphere_extinction_time():
    tr = run_from_measure(MeasureSpec.round(4 * math.pi), L=8, h=0.1, delta=0.0, t_end=0.4999, dt=0.01, ratio=None)
    # [PAPER] u = 1 - 2t, extinct at T = 1/2
    last = tr.snapshots[-1]
    assert np.allclose(last.u, 1 - 2 * last.t, atol=1e-6)
    assert tr.extinction_time == pytest.approx(0.5, abs=1e-6)


# trajectories and campaigns ----------------------------------------------------------------


def test_make_schedule():
    ts = make_schedule(0.0, 1.0, 0.25)
    assert np.allclose(ts, [0.25, 0.5, 0.75, 1.0])
    ts = make_schedule(0.01, 1.0, 0.1, ratio=2.0, extra=[0.333])
    assert ts[0] == pytest.approx(0.02)
    assert np.all(np.diff(ts) > 0)
    assert np.any(np.isclose(ts, 0.333))
    assert np.max(np.diff(ts)) <= 0.1 + 1e-12
    assert ts[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_schedule(1.0, 0.5, 0.1)


def test_trivial_disc_stays_above_big_bang():
    tr = run_from_measure(MeasureSpec.trivial(DISC), h=1e-4, delta=0.0, t_end=0.5, n=48, dt=0.05, ratio=None)
    g = tr.grid
    for s in tr.snapshots[1:]:
        bb = 2 * s.t * g.hyperbolic()[g.inside]
        assert np.all(s.u[g.inside] >= bb * (1 - 1e-2))
    # a flow started at delta > 0 sits above the shifted barrier 2(t - delta) h_R instead
    delta = 1e-3
    tr = run_from_measure(MeasureSpec.trivial(DISC), h=1e-4, delta=delta, t_end=0.1, n=48, dt=0.05, ratio=2.0)
    for s in tr.snapshots[1:]:
        bb = 2 * (s.t - delta) * g.hyperbolic()[g.inside]
        assert np.all(s.u[g.inside] >= bb * (1 - 1e-2))
    assert np.all(np.diff(tr.times) > 0)


def test_plane_chart_area_follows_mass_loss():
    m = 4 * math.pi
    mu = MeasureSpec.gaussian(PLANE, m, 0.5)
    tr = run_from_measure(mu, R=8.0, n=128, h=0.01, delta=0.0, t_end=0.5, dt=0.05, ratio=None, mode="geodesic")
    # (1 - t/T) m plus the add-on h·(chart part of the round background)
    for t, a in zip(tr.times, tr.area()):
        assert a == pytest.approx((1 - t) * m, abs=0.02 * m)


def test_dump_and_load_round_trip(tmp_path):
    tr = run_from_measure(MeasureSpec.gaussian(DISC, 1.0, 0.2), h=0.05, delta=1e-3, t_end=0.02, n=32, dt=0.01)
    index = tr.dump(tmp_path / "traj")
    meta = json.loads((index.parent / "snap_00001.json").read_text())
    assert {"surface", "R", "n", "t"} <= set(meta)
    raw = np.fromfile(index.parent / "snap_00001.f64", dtype="<f8")
    assert raw.size == 32 * 32
    back = Trajectory.load(index.parent)
    assert np.allclose(back.times, tr.times)
    for a, b in zip(back.snapshots, tr.snapshots):
        assert np.array_equal(np.isnan(a.u), np.isnan(b.u))
        assert np.allclose(a.u[~np.isnan(a.u)], b.u[~np.isnan(b.u)])
    with pytest.raises(KeyError):
        tr.at(0.5)
    assert tr.at(tr.times[1]).t == tr.times[1]


def test_big_bang_decreases_in_radius():
    # [DERIVED] for fixed x, h_R(x) decreases in R; so do the big-bang flows
    t = 0.1
    small = big_bang_state(2.0, 40, t, PLANE)
    big = big_bang_state(3.0, 60, t, PLANE)
    a = evolve(small, [0.15, 0.2])
    b = evolve(big, [0.15, 0.2])
    for s1, s2 in zip(a.snapshots, b.snapshots):
        m = small.grid.inside
        assert np.all(small.grid.restrict_from(big.grid, s2.u)[m] <= s1.u[m] * (1 + 1e-9))


def test_exhaustion_is_monotone_and_contracting():
    mu = MeasureSpec.gaussian(PLANE, 4 * math.pi, 0.5)
    ex = run_exhaustion(mu, [2.0, 3.0, 4.0], h=0.05, t_end=0.1, dx=0.1, dt=0.02, mode="collar")
    assert ex.violations == 0
    g0 = ex.limit_grid
    m = g0.inside
    u = [g0.restrict_from(tr.grid, tr.snapshots[-1].u)[m] for tr in ex.trajectories]
    assert np.max(np.abs(u[2] - u[1])) < np.max(np.abs(u[1] - u[0]))
    assert np.all(ex.limit[m] <= u[2] + 1e-12)
    with pytest.raises(ValueError):
        run_exhaustion(mu, [3.0, 2.0], h=0.05, t_end=0.1)
