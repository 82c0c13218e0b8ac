"""Model surfaces, background metrics and discretization grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .spectral import SphereTransform


class SurfaceKind(str, Enum):
    DISC = "disc"
    PLANE = "plane"
    SPHERE = "sphere"


def hyperbolic_factor(R: float, x) -> np.ndarray:
    """Conformal factor ``(2R / (R^2 - |x|^2))^2`` of the complete hyperbolic metric on B_R.

    ``x`` holds points along its last axis (length 2).
    """
    x = np.asarray(x, dtype=float)
    return radial_hyperbolic_factor(R, np.sqrt(np.sum(x * x, axis=-1)))


def radial_hyperbolic_factor(R: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= R):
        raise ValueError(f"point outside the open ball of radius {R}")
    return (2.0 * R / (R * R - r * r)) ** 2


def hyperbolic_volume(r: float, R: float) -> float:
    """Hyperbolic area of B_r inside the complete hyperbolic B_R: 4 pi r^2 / (R^2 - r^2)."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if r >= R:
        raise ValueError("ball reaches the ideal boundary; volume is infinite")
    return 4.0 * np.pi * r * r / (R * R - r * r)


def round_background(x) -> np.ndarray:
    """Stereographic pull-back of the round unit sphere: 4 / (1 + |x|^2)^2."""
    x = np.asarray(x, dtype=float)
    return 4.0 / (1.0 + np.sum(x * x, axis=-1)) ** 2


@dataclass(frozen=True)
class ChartGrid:
    """Cell-centred uniform grid on the square [-R, R]^2 holding the chart B_R.

    Nodes sit at ``-R + (i + 1/2) dx`` with ``dx = 2R/n``; only nodes with
    ``|x| < R`` belong to the chart.  Nodes with ``|x| >= R - collar_width``
    form the boundary collar where Dirichlet data is imposed; the rest are
    active unknowns.
    """

    R: float
    n: int
    collar_fraction: float = 0.05
    center: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        if self.R <= 0 or self.n < 4:
            raise ValueError("need R > 0 and n >= 4")

    @property
    def dx(self) -> float:
        return 2.0 * self.R / self.n

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @cached_property
    def coords(self) -> np.ndarray:
        return -self.R + (np.arange(self.n) + 0.5) * self.dx

    @cached_property
    def X(self) -> np.ndarray:
        return np.broadcast_to(self.coords[:, None], (self.n, self.n))

    @cached_property
    def Y(self) -> np.ndarray:
        return np.broadcast_to(self.coords[None, :], (self.n, self.n))

    @cached_property
    def points(self) -> np.ndarray:
        return np.stack([self.X, self.Y], axis=-1)

    @cached_property
    def r(self) -> np.ndarray:
        return np.hypot(self.X, self.Y)

    @cached_property
    def inside(self) -> np.ndarray:
        return self.r < self.R

    @property
    def collar_width(self) -> float:
        return max(self.collar_fraction * self.R, 2.0 * self.dx)

    @cached_property
    def active(self) -> np.ndarray:
        return self.r < self.R - self.collar_width

    @cached_property
    def collar(self) -> np.ndarray:
        return self.inside & ~self.active

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        """Active nodes that neighbour a node outside the chart, counted per face."""
        count = np.zeros((self.n, self.n), dtype=int)
        for shift, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
            nb = _shifted(self.inside, shift, axis, fill=False)
            count += self.inside & ~nb
        return count

    def ball(self, radius: float, strict: bool = True) -> np.ndarray:
        return self.r < radius if strict else self.r <= radius

    def integrate(self, F: np.ndarray, mask: np.ndarray | None = None) -> float:
        m = self.inside if mask is None else mask
        return float(np.sum(F[m]) * self.cell_area)

    def laplacian(self, F: np.ndarray) -> np.ndarray:
        """5-point Laplacian; NaN where a neighbour is off the grid."""
        out = np.full(F.shape, np.nan)
        c = F[1:-1, 1:-1]
        out[1:-1, 1:-1] = (F[2:, 1:-1] + F[:-2, 1:-1] + F[1:-1, 2:] + F[1:-1, :-2] - 4.0 * c) / self.cell_area
        return out

    @cached_property
    def active_index(self) -> np.ndarray:
        idx = -np.ones((self.n, self.n), dtype=int)
        idx[self.active] = np.arange(int(self.active.sum()))
        return idx

    @cached_property
    def stencil(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(A, B)`` with ``lap F = A @ F[active] + B @ F[collar]`` on active nodes."""
        I, J = np.nonzero(self.active)
        aidx = self.active_index
        cidx = -np.ones((self.n, self.n), dtype=int)
        cidx[self.collar] = np.arange(int(self.collar.sum()))
        rows_a, cols_a, rows_b, cols_b = [], [], [], []
        me = aidx[I, J]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a = aidx[I + di, J + dj]
            c = cidx[I + di, J + dj]
            m = a >= 0
            rows_a.append(me[m])
            cols_a.append(a[m])
            m = c >= 0
            rows_b.append(me[m])
            cols_b.append(c[m])
        na, nc = int(self.active.sum()), int(self.collar.sum())
        rows_a.append(me)
        cols_a.append(me)
        ra, ca = np.concatenate(rows_a), np.concatenate(cols_a)
        va = np.ones(ra.size)
        va[-na:] = -4.0
        A = sp.csr_matrix((va, (ra, ca)), shape=(na, na)) / self.cell_area
        rb, cb = np.concatenate(rows_b), np.concatenate(cols_b)
        B = sp.csr_matrix((np.ones(rb.size), (rb, cb)), shape=(na, nc)) / self.cell_area
        return A, B

    def hyperbolic(self) -> np.ndarray:
        """``h_R`` on chart nodes, NaN outside."""
        out = np.full((self.n, self.n), np.nan)
        out[self.inside] = radial_hyperbolic_factor(self.R, self.r[self.inside])
        return out

    def shares_nodes_with(self, other: "ChartGrid") -> bool:
        return np.isclose(self.dx, other.dx) and np.isclose((self.R - other.R) / self.dx % 1.0, 0.0)

    def restrict_from(self, other: "ChartGrid", F: np.ndarray) -> np.ndarray:
        """Values of a field on the larger grid ``other`` at this grid's nodes."""
        if not self.shares_nodes_with(other) or other.R < self.R:
            raise ValueError("grids do not share nodes")
        off = int(round((other.R - self.R) / self.dx))
        return F[off : off + self.n, off : off + self.n]


def _shifted(a: np.ndarray, shift: int, axis: int, fill) -> np.ndarray:
    out = np.full_like(a, fill)
    if axis == 0:
        if shift > 0:
            out[:-shift] = a[shift:]
        else:
            out[-shift:] = a[:shift]
    else:
        if shift > 0:
            out[:, :-shift] = a[:, shift:]
        else:
            out[:, -shift:] = a[:, :shift]
    return out


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre x uniform-longitude grid for band limit ``L``."""

    L: int = 64

    @cached_property
    def transform(self) -> SphereTransform:
        return SphereTransform(self.L)

    @property
    def shape(self) -> tuple[int, int]:
        return self.transform.shape

    @property
    def weights(self) -> np.ndarray:
        return self.transform.weights

    @property
    def unit_vectors(self) -> np.ndarray:
        return self.transform.unit_vectors

    def integrate(self, F: np.ndarray) -> float:
        return self.transform.integrate(F)

    def laplacian(self, F: np.ndarray) -> np.ndarray:
        return self.transform.laplacian(F)


def curvature(u: np.ndarray, grid: ChartGrid | SphereGrid) -> np.ndarray:
    """Gauss curvature of ``u * background``.

    Flat charts: ``-lap(log u) / (2u)`` (NaN on the outermost ring).  Sphere:
    ``(1 - lap0(log u) / 2) / u`` against the round metric.
    """
    u = np.asarray(u, dtype=float)
    if isinstance(grid, SphereGrid):
        if np.any(u <= 0):
            raise ValueError("conformal factor must be positive")
        return (1.0 - 0.5 * grid.laplacian(np.log(u))) / u
    vals = u[grid.inside]
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise ValueError("conformal factor must be positive on the chart")
    with np.errstate(invalid="ignore", divide="ignore"):
        logu = np.where(grid.inside, np.log(np.where(grid.inside, u, 1.0)), np.nan)
        return -grid.laplacian(logu) / (2.0 * u)
