"""Elliptic solvers: constructive plane Poisson solver, spectral sphere solver, Dirichlet ball solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .geometry import ChartGrid, SphereGrid


# ---------------------------------------------------------------------------
# log kernel


def _log_antiderivative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """G with d^2 G / dx dy = log sqrt(x^2 + y^2)."""
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
        ax = np.where(x != 0, x * x * np.arctan(y / np.where(x != 0, x, 1.0)), 0.0)
        ay = np.where(y != 0, y * y * np.arctan(x / np.where(y != 0, y, 1.0)), 0.0)
    return 0.5 * (x * y * (lg - 3.0) + ax + ay)


def cell_log_integral(ox: np.ndarray, oy: np.ndarray, dx: float) -> np.ndarray:
    """Exact ``int log|y| dy`` over the square cell of side ``dx`` centred at ``(ox, oy)``."""
    a, b = ox - dx / 2, ox + dx / 2
    c, d = oy - dx / 2, oy + dx / 2
    G = _log_antiderivative
    return G(b, d) - G(a, d) - G(b, c) + G(a, c)


def newtonian_potential(f: np.ndarray, grid: ChartGrid, points: np.ndarray | None = None) -> np.ndarray:
    """``(1/2pi) int log|x - y| f(y) dy`` with ``f`` piecewise constant on grid cells.

    Evaluated at every grid node (by FFT) or at arbitrary ``points`` (direct sum).
    """
    f = np.where(np.isfinite(f), f, 0.0)
    if points is None:
        n = grid.n
        o = np.arange(-(n - 1), n) * grid.dx
        K = cell_log_integral(o[:, None], o[None, :], grid.dx) / (2 * np.pi)
        return fftconvolve(f, K, mode="same")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    nz = f != 0
    sx, sy, fv = grid.X[nz], grid.Y[nz], f[nz]
    out = np.empty(pts.shape[0])
    chunk = max(1, 4_000_000 // max(1, fv.size))
    for s in range(0, pts.shape[0], chunk):
        p = pts[s : s + chunk]
        K = cell_log_integral(p[:, 0:1] - sx[None, :], p[:, 1:2] - sy[None, :], grid.dx)
        out[s : s + chunk] = K @ fv / (2 * np.pi)
    return out.reshape(np.asarray(points).shape[:-1])


# ---------------------------------------------------------------------------
# Dirichlet problems on a chart


@lru_cache(maxsize=8)
def _laplace_factor(grid: ChartGrid):
    A, B = grid.stencil
    return spla.splu(A.tocsc()), B


def solve_ball_dirichlet(f: np.ndarray, boundary, grid: ChartGrid) -> np.ndarray:
    """5-point ``lap v = f`` on active nodes with ``v = boundary`` on the collar.

    ``boundary`` is a grid array (collar values are used) or a callable on points.
    Nodes outside the chart are NaN.
    """
    lu, B = _laplace_factor(grid)
    bvals = boundary(grid.points) if callable(boundary) else np.asarray(boundary, dtype=float)
    bvals = np.broadcast_to(bvals, (grid.n, grid.n))
    gb = bvals[grid.collar]
    rhs = np.asarray(f, dtype=float)[grid.active] - B @ gb
    x = lu.solve(rhs)
    v = np.full((grid.n, grid.n), np.nan)
    v[grid.active] = x
    v[grid.collar] = gb
    return v


def dirichlet_residual(v: np.ndarray, f: np.ndarray, grid: ChartGrid) -> float:
    A, B = grid.stencil
    r = A @ v[grid.active] + B @ v[grid.collar] - np.asarray(f)[grid.active]
    return float(np.max(np.abs(r))) if r.size else 0.0


# ---------------------------------------------------------------------------
# sphere


def solve_sphere(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """Mean-zero ``w`` with ``lap0 w = f - mean(f)``."""
    return grid.transform.inverse_laplacian(np.asarray(f, dtype=float))


# ---------------------------------------------------------------------------
# annular decomposition


@dataclass
class PieceReport:
    i: int
    degree: int
    bound: float
    target: float
    fit_error: float

    @property
    def ok(self) -> bool:
        return self.i < 2 or self.bound <= self.target


@dataclass
class AnnularDecomposition:
    grid: ChartGrid
    pieces: list = field(default_factory=list)
    potentials: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def v(self) -> np.ndarray:
        return np.sum(self.potentials, axis=0)

    def partial_sums(self) -> list:
        return list(np.cumsum(self.potentials, axis=0))

    @property
    def bounds_ok(self) -> bool:
        return all(r.ok for r in self.reports)

    def residual(self, f: np.ndarray, radius: float | None = None) -> float:
        """sup of ``|lap_h v - f|`` over nodes of ``B_radius`` (default ``B_{i_max - 1}``)."""
        g = self.grid
        radius = g.R - 1 if radius is None else radius
        lap = g.laplacian(self.v)
        m = g.ball(radius) & g.active & np.isfinite(lap)
        return float(np.max(np.abs(lap[m] - np.asarray(f)[m]))) if m.any() else 0.0


def _harmonic_fit(values: np.ndarray, K: int) -> np.ndarray:
    """Fourier coefficients up to mode K of samples on a circle (equispaced)."""
    c = np.fft.rfft(values) / values.size
    c[K + 1 :] = 0.0
    return c


def _harmonic_eval(c: np.ndarray, rho: float, pts: np.ndarray) -> np.ndarray:
    z = (pts[..., 0] + 1j * pts[..., 1]) / rho
    out = np.full(z.shape, c[0].real)
    zk = np.ones_like(z)
    for k in range(1, c.size):
        zk = zk * z
        if c[k] != 0:
            out += 2.0 * (c[k] * zk).real
    return out


def solve_plane(f: np.ndarray, grid: ChartGrid, i_max: int | None = None, K_max: int = 128, safety: float = 0.5) -> AnnularDecomposition:
    """Annular Poisson solve: ``v = sum v_i`` with ``lap_h v = f`` on the active chart.

    Piece ``i`` is ``f`` on ``B_i \\ B_{i-1}``; its Newtonian potential ``u_i`` is
    corrected by a harmonic polynomial fitted on the circle ``|x| = i - 5/4``
    with degree raised until the sup on that circle is below ``safety * 2^-i``.
    ``v_i`` solves the discrete Dirichlet problem with data ``u_i - p_i``, so the
    discrete residual is exact to solver precision.
    """
    f = np.where(grid.inside, np.asarray(f, dtype=float), 0.0)
    i_max = int(np.ceil(grid.R)) if i_max is None else int(i_max)
    if i_max < 1:
        raise ValueError("need i_max >= 1")
    dec = AnnularDecomposition(grid)
    r = grid.r
    for i in range(1, i_max + 1):
        lo = -np.inf if i == 1 else i - 1
        mask = (r >= lo) & ((r < i) if i < i_max else grid.inside)
        fi = np.where(mask, f, 0.0)
        dec.pieces.append(fi)
        if not np.any(fi):
            dec.potentials.append(np.where(grid.inside, 0.0, np.nan))
            dec.reports.append(PieceReport(i, 0, 0.0, 2.0**-i, 0.0))
            continue
        ui = newtonian_potential(fi, grid)
        if i == 1:
            vi = solve_ball_dirichlet(fi, ui, grid)
            dec.potentials.append(vi)
            # no bound is claimed for the innermost piece
            dec.reports.append(PieceReport(i, 0, float("nan"), float("inf"), 0.0))
            continue
        rho = i - 1.25
        M = 4 * K_max + 8
        th = 2 * np.pi * np.arange(M) / M
        circ = rho * np.stack([np.cos(th), np.sin(th)], axis=-1)
        uc = newtonian_potential(fi, grid, circ)
        target = 2.0**-i
        K, best = 0, None
        inner = grid.ball(i - 1.5) & grid.active
        while True:
            c = _harmonic_fit(uc, K)
            fit_err = float(np.max(np.abs(uc - _harmonic_eval(c, rho, circ))))
            if fit_err <= safety * target or K >= K_max:
                data = ui - _harmonic_eval(c, rho, grid.points)
                vi = solve_ball_dirichlet(fi, data, grid)
                bound = float(np.max(np.abs(vi[inner]))) if inner.any() else 0.0
                rep = PieceReport(i, K, bound, target, fit_err)
                if best is None or rep.bound < best[1].bound:
                    best = (vi, rep)
                if rep.ok or K >= K_max:
                    break
            K = max(1, 2 * K) if K < K_max else K_max
            K = min(K, K_max)
        dec.potentials.append(best[0])
        dec.reports.append(best[1])
    return dec
