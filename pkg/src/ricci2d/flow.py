"""Backward-Euler time stepping of the logarithmic fast diffusion equation.

Each step solves ``e^w - dt * lap(w) = u_old`` for ``w = log u_new`` by damped
Newton iteration.  Flat charts use the 5-point Laplacian; the sphere uses the
spectral round Laplacian together with the constant curvature source ``-2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ChartGrid, SphereGrid, SurfaceKind, radial_hyperbolic_factor
from .measure import MeasureSpec, smooth, total_mass


class FlowError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoFlowError(ValueError):
    """Raised when the maximal existence time is zero."""


class Extinction(RuntimeError):
    def __init__(self, state: "FlowState"):
        super().__init__(f"extinction reached near t = {state.t:.6g}")
        self.state = state


class BoundaryMode(str, Enum):
    # Dirichlet data on an inset collar realizing completeness
    COLLAR = "collar"
    # reflecting condition making the chart circle a geodesic of the flowing metric
    GEODESIC = "geodesic"


@dataclass(frozen=True)
class StepDiagnostics:
    newton_iterations: int = 0
    residual: float = 0.0
    halvings: int = 0
    linear_solver: str = ""


@dataclass(frozen=True)
class FlowState:
    surface: SurfaceKind
    grid: ChartGrid | SphereGrid
    u: np.ndarray
    t: float
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)
    mode: BoundaryMode = BoundaryMode.COLLAR
    # time origin and conformal factor on the collar at that time; collar data is
    # collar_base + 2 (t - t_origin) h_R
    t_origin: float | None = None
    collar_base: np.ndarray | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be nonnegative")
        vals = self.u if isinstance(self.grid, SphereGrid) else self.u[self.grid.inside]
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("conformal factor must be strictly positive")

    @property
    def origin(self) -> float:
        return self.t if self.t_origin is None else self.t_origin

    def area(self, mask: np.ndarray | None = None) -> float:
        if isinstance(self.grid, SphereGrid):
            return self.grid.integrate(self.u)
        return self.grid.integrate(self.u, mask)

    def collar_values(self, t: float) -> np.ndarray:
        g = self.grid
        base = self.collar_base if self.collar_base is not None else self.u[g.collar]
        return base + 2.0 * (t - self.origin) * radial_hyperbolic_factor(g.R, g.r[g.collar])


def maximal_time(mu: MeasureSpec, surface: SurfaceKind | str | None = None) -> float:
    """Existence time: infinite on the disc, mass/4pi on the plane, mass/8pi on the sphere."""
    surface = SurfaceKind(surface) if surface is not None else mu.surface
    if surface is SurfaceKind.DISC:
        return math.inf
    m = total_mass(mu)
    return m / (4 * math.pi) if surface is SurfaceKind.PLANE else m / (8 * math.pi)


# ---------------------------------------------------------------------------
# flat charts


def _geodesic_flux(grid: ChartGrid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Laplacian on all chart nodes with ghost values enforcing d_r log u = -2/r."""
    inside = grid.inside
    idx = -np.ones((grid.n, grid.n), dtype=int)
    N = int(inside.sum())
    idx[inside] = np.arange(N)
    I, J = np.nonzero(inside)
    me = idx[I, J]
    ell = -2.0 * np.log(grid.r)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    g = np.zeros(N)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        Ii, Jj = I + di, J + dj
        ok = (Ii >= 0) & (Ii < grid.n) & (Jj >= 0) & (Jj < grid.n)
        nb = np.full(I.shape, -1)
        nb[ok] = idx[Ii[ok], Jj[ok]]
        m = nb >= 0
        rows.append(me[m])
        cols.append(nb[m])
        vals.append(np.ones(m.sum()))
        diag[m] -= 1.0
        # ghost: w_j - w_i = ell_j - ell_i
        out = ~m
        xj = grid.coords[np.clip(Ii, 0, grid.n - 1)] + np.where(Ii >= grid.n, grid.dx, 0) - np.where(Ii < 0, grid.dx, 0)
        yj = grid.coords[np.clip(Jj, 0, grid.n - 1)] + np.where(Jj >= grid.n, grid.dx, 0) - np.where(Jj < 0, grid.dx, 0)
        ellj = -np.log(xj * xj + yj * yj)
        g[me[out]] += ellj[out] - ell[I[out], J[out]]
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return A / grid.cell_area, g / grid.cell_area


_GEO_CACHE: dict = {}


def _chart_operator(grid: ChartGrid, mode: BoundaryMode):
    if mode is BoundaryMode.COLLAR:
        A, B = grid.stencil
        return grid.active, A, B
    key = grid
    if key not in _GEO_CACHE:
        _GEO_CACHE.clear()
        _GEO_CACHE[key] = _geodesic_flux(grid)
    A, g = _GEO_CACHE[key]
    return grid.inside, A, g


class _SPDSolver:
    """Solves ``J x = b`` for SPD ``J``; the AMG hierarchy of the first matrix is
    kept as a preconditioner for later matrices with the same pattern."""

    def __init__(self):
        self._ml = None

    def __call__(self, J: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, str]:
        if J.shape[0] < 4000:
            return spla.spsolve(J.tocsc(), b), "direct"
        J = J.tocsr()
        try:
            if self._ml is None:
                self._ml = pyamg.ruge_stuben_solver(J)
            M = self._ml.aspreconditioner(cycle="V")
            x, info = spla.cg(J, b, M=M, rtol=rtol, atol=0.0, maxiter=300)
            if info == 0 and np.all(np.isfinite(x)):
                return x, "amg-cg"
        except Exception:  # pragma: no cover - defensive fallback
            pass
        return spla.spsolve(J.tocsc(), b), "direct"


def _newton(F_and_J, w0, tol, max_iter):
    """Damped Newton; ``F_and_J`` returns the residual, a solver and a per-node
    magnitude scale against which the residual is measured (so that the
    rounding floor of large cancelling terms does not stall convergence)."""
    w = w0.copy()
    solver = ""
    for it in range(1, max_iter + 2):
        F, Jac, S = F_and_J(w)
        res = float(np.max(np.abs(F) / S))
        if res <= tol:
            return w, it - 1, res, solver
        if it > max_iter:
            break
        # inexact Newton: linear accuracy tightens with the residual
        dw, solver = Jac(-F, min(1e-3, max(1e-12, 0.01 * res)))
        if not np.all(np.isfinite(dw)):
            break
        w = w + np.clip(dw, -2.0, 2.0)
    raise FlowError("Newton iteration did not converge", {"residual": res, "iterations": max_iter})


def _step_chart_once(state: FlowState, dt: float, tol: float, max_iter: int, guess=None) -> FlowState:
    g = state.grid
    mask, A, extra = _chart_operator(g, state.mode)
    t_new = state.t + dt
    u_old = state.u[mask]
    if state.mode is BoundaryMode.COLLAR:
        ucol = state.collar_values(t_new)
        b = extra @ np.log(ucol)
    else:
        b = extra
    w_old = np.log(u_old)
    linear = _SPDSolver()

    absA = abs(A)

    def F_and_J(w):
        ew = np.exp(w)
        F = ew - dt * (A @ w + b) - u_old
        S = ew + u_old + dt * (absA @ np.abs(w) + np.abs(b))

        def solve(rhs, rtol):
            return linear(sp.diags(ew) - dt * A, rhs, rtol)

        return F, solve, S

    # the big-bang solution scales like t; pick whichever guess fits better
    guesses = [w_old]
    if state.t > 0:
        guesses.append(w_old + math.log(t_new / state.t))
    if guess is not None:
        guesses.append(guess[mask])
    w0 = min(guesses, key=lambda w: np.max(np.abs(F_and_J(w)[0])))
    w, its, res, solver = _newton(F_and_J, w0, tol, max_iter)
    u = np.full(state.u.shape, np.nan)
    u[mask] = np.exp(w)
    if state.mode is BoundaryMode.COLLAR:
        u[g.collar] = ucol
        base = state.collar_base if state.collar_base is not None else state.u[g.collar]
    else:
        base = None
    return replace(
        state,
        u=u,
        t=t_new,
        diagnostics=StepDiagnostics(its, res, 0, solver),
        t_origin=state.origin,
        collar_base=base,
    )


def step_disc(state: FlowState, dt: float, tol: float = 1e-10, max_iter: int = 40, max_halvings: int = 6,
              guess: np.ndarray | None = None) -> FlowState:
    """One backward-Euler step on a flat chart (disc or plane ball).

    On Newton failure the step is retried as two half steps, recursively.
    ``guess`` optionally supplies a starting value for ``log u_new``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(state.grid, SphereGrid):
        raise TypeError("use step_sphere for sphere states")
    return _with_halving(_step_chart_once, state, dt, tol, max_iter, max_halvings, guess=guess)


def _with_halving(stepper, state, dt, tol, max_iter, max_halvings, depth=0, guess=None):
    try:
        return stepper(state, dt, tol, max_iter, guess if depth == 0 else None)
    except FlowError as err:
        if depth >= max_halvings:
            err.diagnostics.update({"t": state.t, "dt": dt, "halvings": depth})
            raise
    mid = _with_halving(stepper, state, dt / 2, tol, max_iter, max_halvings, depth + 1)
    out = _with_halving(stepper, mid, dt / 2, tol, max_iter, max_halvings, depth + 1)
    d = out.diagnostics
    return replace(out, diagnostics=replace(d, halvings=max(d.halvings, depth + 1)))


# ---------------------------------------------------------------------------
# sphere


def _step_sphere_once(state: FlowState, dt: float, tol: float, max_iter: int, guess=None) -> FlowState:
    tr = state.grid.transform
    u_old = state.u
    W = tr.weights
    lam = tr.eigenvalues

    def F_and_J(w):
        ew = np.exp(w)
        lap = tr.laplacian(w)
        F = ew - dt * (lap - 2.0) - u_old
        S = ew + u_old + dt * (np.abs(lap) + 2.0)

        def solve(rhs, rtol):
            c = float(np.sum(W * ew) / np.sum(W))

            def matvec(x):
                x = x.reshape(tr.shape)
                return (W * (ew * x - dt * tr.laplacian(x))).ravel()

            def prec(r):
                r = r.reshape(tr.shape) / W
                a = tr.analysis(r)
                band = tr.synthesis(a / (c - dt * lam)[:, None])
                rest = r - tr.synthesis(a)
                return (band + rest / c).ravel()

            n = rhs.size
            Aop = spla.LinearOperator((n, n), matvec=matvec)
            M = spla.LinearOperator((n, n), matvec=prec)
            x, info = spla.cg(Aop, (W * rhs).ravel(), M=M, rtol=rtol, atol=0.0, maxiter=500)
            if info != 0:
                return np.full(rhs.shape, np.nan), "cg"
            return x.reshape(tr.shape), "spectral-cg"

        return F, solve, S

    w0 = np.log(u_old)
    if guess is not None and np.max(np.abs(F_and_J(guess)[0])) < np.max(np.abs(F_and_J(w0)[0])):
        w0 = guess
    w, its, res, solver = _newton(F_and_J, w0, tol, max_iter)
    return replace(state, u=np.exp(w), t=state.t + dt, diagnostics=StepDiagnostics(its, res, 0, solver))


def step_sphere(state: FlowState, dt: float, tol: float = 1e-11, max_iter: int = 40, max_halvings: int = 4,
                guess: np.ndarray | None = None) -> FlowState:
    """One backward-Euler step of ``u_t = lap0 log u - 2``.

    Raises :class:`Extinction` carrying the current state once ``min u < 4 dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if float(np.min(state.u)) < 4.0 * dt:
        raise Extinction(state)
    try:
        return _with_halving(_step_sphere_once, state, dt, tol, max_iter, max_halvings, guess=guess)
    except FlowError:
        raise Extinction(state)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Snapshot:
    t: float
    u: np.ndarray
    # running integrals of chi_{u<=1} log u and chi_{u>1} log u from the trajectory start
    log_lo: np.ndarray
    log_hi: np.ndarray
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)

    @property
    def log_integral(self) -> np.ndarray:
        return self.log_lo + self.log_hi


@dataclass
class Trajectory:
    surface: SurfaceKind
    grid: ChartGrid | SphereGrid
    snapshots: list
    measure: MeasureSpec | None = None
    h: float | None = None
    R: float | None = None
    mode: BoundaryMode = BoundaryMode.COLLAR
    kernel: str = "bump"
    truncated: bool = False
    extinction_time: float | None = None
    step_times: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def t_start(self) -> float:
        return self.snapshots[0].t

    def at(self, t: float) -> Snapshot:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.snapshots[k].t, t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"no snapshot at t = {t}")
        return self.snapshots[k]

    def area(self, mask: np.ndarray | None = None) -> np.ndarray:
        if isinstance(self.grid, SphereGrid):
            return np.array([self.grid.integrate(s.u) for s in self.snapshots])
        return np.array([self.grid.integrate(s.u, mask) for s in self.snapshots])

    def interior(self) -> np.ndarray:
        """Nodes where the evolution equation itself is enforced."""
        if isinstance(self.grid, SphereGrid):
            return np.ones(self.grid.shape, dtype=bool)
        return self.grid.active if self.mode is BoundaryMode.COLLAR else self.grid.inside

    # dump / load -------------------------------------------------------
    def dump(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for k, s in enumerate(self.snapshots):
            stem = f"snap_{k:05d}"
            np.ascontiguousarray(s.u, dtype="<f8").tofile(d / f"{stem}.f64")
            meta = {"surface": self.surface.value, "t": s.t, "shape": list(s.u.shape)}
            if isinstance(self.grid, SphereGrid):
                meta["L"] = self.grid.L
            else:
                meta.update(R=self.grid.R, n=self.grid.n)
            (d / f"{stem}.json").write_text(json.dumps(meta))
            entries.append({"t": s.t, "data": f"{stem}.f64", "meta": f"{stem}.json"})
        index = {
            "surface": self.surface.value,
            "mode": self.mode.value,
            "h": self.h,
            "truncated": self.truncated,
            "extinction_time": self.extinction_time,
            "measure": self.measure.to_dict() if self.measure else None,
            "snapshots": entries,
        }
        (d / "index.json").write_text(json.dumps(index, indent=1))
        return d / "index.json"

    @classmethod
    def load(cls, directory: str | Path) -> "Trajectory":
        d = Path(directory)
        index = json.loads((d / "index.json").read_text())
        snaps = []
        grid = None
        for e in index["snapshots"]:
            meta = json.loads((d / e["meta"]).read_text())
            u = np.fromfile(d / e["data"], dtype="<f8").reshape(meta["shape"])
            if grid is None:
                grid = SphereGrid(meta["L"]) if "L" in meta else ChartGrid(meta["R"], meta["n"])
            z = np.zeros_like(u)
            snaps.append(Snapshot(meta["t"], u, z, z))
        mu = MeasureSpec.from_dict(index["measure"]) if index.get("measure") else None
        return cls(
            SurfaceKind(index["surface"]), grid, snaps, mu, index.get("h"),
            getattr(grid, "R", None), BoundaryMode(index.get("mode", "collar")),
            truncated=index.get("truncated", False), extinction_time=index.get("extinction_time"),
        )


def make_schedule(t0: float, t_end: float, dt: float, ratio: float | None = None, extra=()) -> np.ndarray:
    """Step end times in ``(t0, t_end]``.

    With ``ratio`` the steps grow geometrically (``t_{k+1} = ratio * t_k``) until
    they reach ``dt``; the requested ``extra`` times are always hit exactly.
    """
    if t_end <= t0:
        raise ValueError("t_end must exceed the start time")
    ts = []
    t = t0
    while t < t_end * (1 - 1e-12):
        step = dt
        if ratio is not None and t > 0:
            step = min(dt, (ratio - 1.0) * t)
        elif ratio is not None:
            step = min(dt, 1e-8)
        t = min(t + step, t_end)
        ts.append(t)
    ts = np.array(ts)
    extra = [e for e in extra if t0 < e <= t_end]
    if extra:
        ts = np.unique(np.concatenate([ts, extra]))
        # drop steps squeezed to nothing next to an inserted time
        keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, t_end)])
        ts = ts[keep]
    return ts


def evolve(state: FlowState, times, keep=None, on_step=None) -> Trajectory:
    """Advance ``state`` through ``times``; returns a trajectory.

    ``keep`` selects stored snapshot times (default: every step).  The running
    log-integrals use the right-endpoint rule, matching backward Euler.
    """
    times = np.asarray(times, dtype=float)
    keep_set = None if keep is None else np.asarray(sorted(keep), dtype=float)
    sphere = isinstance(state.grid, SphereGrid)
    lo = np.zeros(state.u.shape)
    hi = np.zeros(state.u.shape)
    snaps = [Snapshot(state.t, state.u, lo.copy(), hi.copy(), state.diagnostics)]
    truncated = False
    ext = None
    cur = state
    prev = None
    for t_next in times:
        dt = t_next - cur.t
        guess = None
        if prev is not None:
            # linear extrapolation of log u in time
            with np.errstate(invalid="ignore"):
                guess = np.log(cur.u) + (np.log(cur.u) - np.log(prev.u)) * dt / (cur.t - prev.t)
        try:
            nxt = (step_sphere if sphere else step_disc)(cur, dt, guess=guess)
        except Extinction as e:
            truncated = True
            ext = _extinction_estimate(e.state)
            break
        except FlowError:
            truncated = True
            break
        with np.errstate(invalid="ignore", divide="ignore"):
            lu = np.log(nxt.u)
        lo = lo + dt * np.where(nxt.u <= 1.0, lu, 0.0)
        hi = hi + dt * np.where(nxt.u > 1.0, lu, 0.0)
        prev, cur = cur, nxt
        if on_step is not None:
            on_step(cur)
        if keep_set is None or np.any(np.isclose(keep_set, cur.t, rtol=1e-9, atol=1e-12)):
            snaps.append(Snapshot(cur.t, cur.u, lo.copy(), hi.copy(), cur.diagnostics))
    if sphere and not truncated and float(np.min(cur.u)) < 4.0 * (times[-1] - times[-2] if len(times) > 1 else 0):
        ext = _extinction_estimate(cur)
    return Trajectory(state.surface, state.grid, snaps, mode=state.mode, truncated=truncated,
                      extinction_time=ext, step_times=times)


def _extinction_estimate(state: FlowState) -> float:
    # the area drops at exactly 8 pi per unit time
    return state.t + state.area() / (8 * math.pi)


def initial_state(mu: MeasureSpec, grid, h: float, delta: float, kernel: str = "bump",
                  mode: BoundaryMode = BoundaryMode.COLLAR) -> FlowState:
    sm = smooth(mu, h, grid, kernel)
    u = sm.field
    if isinstance(grid, SphereGrid):
        # keep the data on the resolved band so the discrete potential identities are exact
        u = grid.transform.project(u)
        if np.min(u) <= 0:
            raise ValueError("smoothed sphere data is not strictly positive; increase h or L")
        return FlowState(SurfaceKind.SPHERE, grid, u, delta)
    u = np.where(grid.inside, u, np.nan)
    return FlowState(mu.surface, grid, u, delta, mode=BoundaryMode(mode))


def run_from_measure(mu: MeasureSpec, surface=None, R: float | None = None, h: float = 0.05,
                     delta: float = 1e-3, t_end: float = 0.1, n: int = 256, L: int = 64,
                     dt: float = 1e-2, ratio: float | None = 1.25, kernel: str = "bump",
                     mode: BoundaryMode | str = BoundaryMode.COLLAR, snapshot_times=None,
                     keep_all: bool = True, grid=None) -> Trajectory:
    """Flow from the smoothed measure, started at time ``delta``."""
    surface = SurfaceKind(surface) if surface is not None else mu.surface
    if surface is not mu.surface:
        raise ValueError("measure lives on a different surface")
    T = maximal_time(mu, surface)
    if T == 0:
        raise NoFlowError("T = 0, no flow exists")
    if surface is not SurfaceKind.DISC and t_end >= T:
        raise ValueError(f"t_end = {t_end} is not below the maximal time {T:.6g}")
    if grid is None:
        if surface is SurfaceKind.SPHERE:
            grid = SphereGrid(L)
        else:
            grid = ChartGrid(1.0 if surface is SurfaceKind.DISC else float(R), n)
    state = initial_state(mu, grid, h, delta, kernel, BoundaryMode(mode))
    extra = tuple(snapshot_times or ())
    times = make_schedule(delta, t_end, dt, ratio, extra)
    keep = None if keep_all or not extra else extra
    traj = evolve(state, times, keep)
    traj.measure, traj.h, traj.kernel = mu, h, kernel
    traj.R = getattr(grid, "R", None)
    return traj


@dataclass
class Exhaustion:
    trajectories: list
    R_list: list
    violations: int
    max_violation: float
    limit: np.ndarray | None = None
    limit_grid: ChartGrid | None = None


def run_exhaustion(mu: MeasureSpec, R_list, h: float, t_end: float, dx: float = 0.05, delta: float = 1e-3,
                   dt: float = 1e-2, ratio: float | None = 1.25, tol: float = 1e-9, **kw) -> Exhaustion:
    """Complete flows on nested balls sharing grid nodes; checks monotone decrease in R.

    The limit field on the smallest ball is estimated from the two largest radii
    by assuming geometric convergence of the decreasing sequence.
    """
    R_list = [float(r) for r in R_list]
    if len(R_list) < 2 or any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be strictly increasing with at least two entries")
    grids = []
    for R in R_list:
        n = int(round(2 * R / dx))
        if not math.isclose(n * dx, 2 * R, rel_tol=1e-12):
            raise ValueError("each radius must be a multiple of dx / 2")
        grids.append(ChartGrid(R, n))
    trajs = [run_from_measure(mu, h=h, delta=delta, t_end=t_end, dt=dt, ratio=ratio, grid=g, **kw) for g in grids]
    violations, worst = 0, 0.0
    for (g1, a), (g2, b) in zip(zip(grids, trajs), zip(grids[1:], trajs[1:])):
        m = g1.inside
        for s1, s2 in zip(a.snapshots[1:], b.snapshots[1:]):
            diff = g1.restrict_from(g2, s2.u)[m] - s1.u[m]
            violations += int(np.sum(diff > tol))
            worst = max(worst, float(np.max(diff)))
    g0 = grids[0]
    u1 = g0.restrict_from(grids[-2], trajs[-2].snapshots[-1].u)
    u2 = g0.restrict_from(grids[-1], trajs[-1].snapshots[-1].u)
    if len(trajs) >= 3:
        u0 = g0.restrict_from(grids[-3], trajs[-3].snapshots[-1].u)
        d1, d2 = u0 - u1, u1 - u2
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.clip(np.where(d1 > 0, d2 / d1, 0.0), 0.0, 0.9)
        limit = u2 - d2 * q / (1 - q)
    else:
        limit = u2
    return Exhaustion(trajs, R_list, violations, worst, limit, g0)
