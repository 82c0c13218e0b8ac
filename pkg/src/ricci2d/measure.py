"""Nonatomic Radon measures: densities, curve measures, masses, pairings, smoothing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .geometry import ChartGrid, SphereGrid, SurfaceKind, round_background

AC_KINDS = ("gaussian", "constant", "round", "table")


class AtomicMeasureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# components


@dataclass(frozen=True)
class AcDensity:
    """Absolutely continuous part, density against Lebesgue (charts) or the round metric (sphere)."""

    kind: str
    params: dict = field(default_factory=dict)
    surface: SurfaceKind = SurfaceKind.PLANE

    def __post_init__(self):
        if self.kind not in AC_KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "table" and self.surface is SurfaceKind.SPHERE:
            L = int(self.params["L"])
            vals = np.asarray(self.params["values"], dtype=float)
            if vals.shape != SphereGrid(L).shape:
                raise ValueError("sphere table must match the grid of its band limit")
        if self.kind == "table" and np.any(np.asarray(self.params["values"], dtype=float) < 0):
            raise ValueError("densities must be nonnegative")

    @property
    def finite_mass(self) -> bool:
        if self.kind == "constant":
            return self.surface is not SurfaceKind.PLANE or self.params.get("value", 0.0) == 0.0
        return True

    def scaled(self, c: float) -> "AcDensity":
        p = dict(self.params)
        if self.kind in ("gaussian", "round"):
            p["mass"] = c * p["mass"]
        elif self.kind == "constant":
            p["value"] = c * p["value"]
        else:
            p["values"] = (c * np.asarray(p["values"], dtype=float)).tolist()
        return AcDensity(self.kind, p, self.surface)

    @cached_property
    def _sphere_gauss_norm(self) -> float:
        s = float(self.params["sigma"])
        val, _ = integrate.quad(lambda th: np.exp(-0.5 * (th / s) ** 2) * np.sin(th), 0.0, np.pi, limit=200)
        return 2.0 * np.pi * val

    @cached_property
    def _interp(self):
        vals = np.asarray(self.params["values"], dtype=float)
        if self.surface is SurfaceKind.SPHERE:
            grid = SphereGrid(int(self.params["L"]))
            return grid.transform.analysis(vals)
        R = float(self.params["R"])
        n = vals.shape[0]
        x = -R + (np.arange(n) + 0.5) * (2 * R / n)
        return RegularGridInterpolator((x, x), vals, bounds_error=False, fill_value=0.0)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Density at chart points ``(..., 2)`` or sphere unit vectors ``(..., 3)``."""
        pts = np.asarray(pts, dtype=float)
        if self.surface is SurfaceKind.SPHERE:
            return self._sphere(pts)
        out = self._flat(pts)
        if self.surface is SurfaceKind.DISC:
            out = np.where(np.sum(pts * pts, axis=-1) < 1.0, out, 0.0)
        return out

    def _flat(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "gaussian":
            c = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
            s = float(p["sigma"])
            d2 = np.sum((x - c) ** 2, axis=-1)
            return p["mass"] / (2 * np.pi * s * s) * np.exp(-0.5 * d2 / (s * s))
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(p["value"]))
        if self.kind == "round":
            return p["mass"] / (4 * np.pi) * round_background(x)
        return self._interp(x.reshape(-1, 2)).reshape(x.shape[:-1])

    def _sphere(self, n: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "gaussian":
            c = np.asarray(p["center"], dtype=float)
            c = c / np.linalg.norm(c)
            d = np.arccos(np.clip(n @ c, -1.0, 1.0))
            return p["mass"] / self._sphere_gauss_norm * np.exp(-0.5 * (d / float(p["sigma"])) ** 2)
        if self.kind == "constant":
            return np.full(n.shape[:-1], float(p["value"]))
        if self.kind == "round":
            return np.full(n.shape[:-1], p["mass"] / (4 * np.pi))
        return _evaluate_harmonics(self._interp, n)


def _evaluate_harmonics(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    from .spectral import normalized_legendre

    L = a.shape[0] - 1
    flat = n.reshape(-1, 3)
    ct = np.clip(flat[:, 2], -1.0, 1.0)
    ph = np.arctan2(flat[:, 1], flat[:, 0])
    P = normalized_legendre(L, ct)
    out = np.zeros(flat.shape[0])
    for m in range(L + 1):
        cm = np.einsum("l,lj->j", a[:, m], P[m]) / np.sqrt(2 * np.pi)
        term = cm * np.exp(1j * m * ph)
        out += term.real if m == 0 else 2 * term.real
    return out.reshape(n.shape[:-1])


@dataclass(frozen=True)
class CurveMeasure:
    """Linear density (mass per length) along a polyline.

    On the sphere the polyline is given in stereographic coordinates and
    lengths are measured in the round metric.
    """

    points: tuple
    density: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a curve needs at least two planar vertices")
        if self.density < 0:
            raise ValueError("linear density must be nonnegative")

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))


def stereographic_to_sphere(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    return np.concatenate([2 * x, r2 - 1.0], axis=-1) / (1.0 + r2)


def sample_curve(curve: CurveMeasure, spacing: float, surface: SurfaceKind):
    """Midpoint samples of a polyline with their masses.

    Returns ``(points, masses)``; points are planar for charts and unit
    vectors for the sphere.
    """
    pts, masses = [], []
    V = curve.vertices
    for a, b in zip(V[:-1], V[1:]):
        seg = np.linalg.norm(b - a)
        if seg == 0:
            continue
        k = max(1, int(np.ceil(seg / spacing)))
        s = (np.arange(k) + 0.5) / k
        p = a[None, :] + s[:, None] * (b - a)[None, :]
        ds = np.full(k, seg / k)
        if surface is SurfaceKind.SPHERE:
            ds = ds * np.sqrt(round_background(p))
            p = stereographic_to_sphere(p)
        pts.append(p)
        masses.append(curve.density * ds)
    if not pts:
        dim = 3 if surface is SurfaceKind.SPHERE else 2
        return np.zeros((0, dim)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(masses)


# ---------------------------------------------------------------------------
# measure


@dataclass(frozen=True)
class MeasureSpec:
    surface: SurfaceKind
    ac: tuple = ()
    curves: tuple = ()

    @classmethod
    def trivial(cls, surface: SurfaceKind) -> "MeasureSpec":
        return cls(SurfaceKind(surface))

    @classmethod
    def gaussian(cls, surface, mass: float, sigma: float, center=None) -> "MeasureSpec":
        surface = SurfaceKind(surface)
        if center is None:
            center = (0.0, 0.0, 1.0) if surface is SurfaceKind.SPHERE else (0.0, 0.0)
        return cls(surface, (AcDensity("gaussian", {"mass": mass, "sigma": sigma, "center": list(center)}, surface),))

    @classmethod
    def round(cls, mass: float = 4 * np.pi, surface=SurfaceKind.SPHERE) -> "MeasureSpec":
        surface = SurfaceKind(surface)
        return cls(surface, (AcDensity("round", {"mass": mass}, surface),))

    @property
    def is_trivial(self) -> bool:
        return not self.ac and not self.curves

    @property
    def finite_mass(self) -> bool:
        return all(a.finite_mass for a in self.ac)

    def scaled(self, c: float) -> "MeasureSpec":
        if c < 0:
            raise ValueError("measures are nonnegative")
        return MeasureSpec(
            self.surface,
            tuple(a.scaled(c) for a in self.ac),
            tuple(CurveMeasure(cv.points, c * cv.density) for cv in self.curves),
        )

    def density(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for a in self.ac:
            out = out + a(pts)
        return out

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "surface": self.surface.value,
            "ac": [{"kind": a.kind, **_jsonable(a.params)} for a in self.ac],
            "curves": [{"points": np.asarray(c.points).tolist(), "density": c.density} for c in self.curves],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureSpec":
        if not isinstance(d, dict) or "surface" not in d:
            raise ValueError("measure needs a 'surface'")
        for key in ("atoms", "points", "dirac", "diracs"):
            if key in d and d[key]:
                raise AtomicMeasureError("atomic measures are not admissible initial data")
        surface = SurfaceKind(d["surface"])
        ac = d.get("ac") or []
        if isinstance(ac, dict):
            ac = [ac]
        comps = []
        for item in ac:
            item = dict(item)
            kind = item.pop("kind", None)
            if kind in ("dirac", "atom", "point"):
                raise AtomicMeasureError("atomic measures are not admissible initial data")
            if kind is None:
                raise ValueError("density component needs a 'kind'")
            if "params" in item:
                item = dict(item["params"])
            comps.append(AcDensity(kind, item, surface))
        curves = []
        for c in d.get("curves") or []:
            pts = np.asarray(c["points"], dtype=float)
            if pts.shape[0] < 2:
                raise AtomicMeasureError("a curve with a single vertex would be an atom")
            curves.append(CurveMeasure(tuple(map(tuple, pts)), float(c["density"])))
        return cls(surface, tuple(comps), tuple(curves))

    @classmethod
    def from_json(cls, text: str) -> "MeasureSpec":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _jsonable(p: dict) -> dict:
    out = {}
    for k, v in p.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


# ---------------------------------------------------------------------------
# regions and quadrature


@dataclass(frozen=True)
class Ball:
    """Euclidean ball in a chart, or geodesic cap (``center`` a unit vector) on the sphere."""

    center: tuple
    radius: float


def _angles(k: int = 256) -> np.ndarray:
    return 2 * np.pi * np.arange(k) / k


def _polar_integral(f: Callable, center: np.ndarray, radius: float, nang: int = 256) -> float:
    th = _angles(nang)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)

    def ring(r):
        return r * np.mean(f(center[None, :] + r * e)) * 2 * np.pi

    val, _ = integrate.quad(ring, 0.0, radius, limit=400, epsabs=1e-12, epsrel=1e-10)
    return float(val)


def _cap_integral(f: Callable, center: np.ndarray, radius: float, nang: int = 256) -> float:
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - (a @ c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    th = _angles(nang)
    dirs = np.cos(th)[:, None] * e1[None, :] + np.sin(th)[:, None] * e2[None, :]

    def ring(r):
        pts = np.cos(r) * c[None, :] + np.sin(r) * dirs
        return np.sin(r) * np.mean(f(pts)) * 2 * np.pi

    val, _ = integrate.quad(ring, 0.0, min(radius, np.pi), limit=400, epsabs=1e-12, epsrel=1e-10)
    return float(val)


def _whole_region(surface: SurfaceKind) -> Ball:
    if surface is SurfaceKind.DISC:
        return Ball((0.0, 0.0), 1.0)
    if surface is SurfaceKind.PLANE:
        return Ball((0.0, 0.0), np.inf)
    return Ball((0.0, 0.0, 1.0), np.pi)


def _segment_length_in_ball(a, b, c, rad) -> float:
    d = b - a
    L = np.linalg.norm(d)
    if L == 0:
        return 0.0
    if not np.isfinite(rad):
        return L
    f = a - c
    A, B, C = d @ d, 2 * f @ d, f @ f - rad * rad
    disc = B * B - 4 * A * C
    if disc <= 0:
        return 0.0
    s0, s1 = (-B - np.sqrt(disc)) / (2 * A), (-B + np.sqrt(disc)) / (2 * A)
    lo, hi = max(0.0, s0), min(1.0, s1)
    return max(0.0, hi - lo) * L


def _curve_mass(mu: MeasureSpec, region: Ball) -> float:
    total = 0.0
    for cv in mu.curves:
        if mu.surface is SurfaceKind.SPHERE:
            pts, m = sample_curve(cv, 1e-3, mu.surface)
            c = np.asarray(region.center, dtype=float)
            c = c / np.linalg.norm(c)
            d = np.arccos(np.clip(pts @ c, -1, 1))
            total += float(np.sum(m[d < region.radius]))
            continue
        V = cv.vertices
        c = np.asarray(region.center, dtype=float)
        for a, b in zip(V[:-1], V[1:]):
            if mu.surface is SurfaceKind.DISC:
                # only the part inside the unit disc carries mass
                ln = _segment_length_in_ball(a, b, np.zeros(2), 1.0)
                if region.radius < np.inf and (np.any(c != 0) or region.radius < 1.0):
                    pts, m = sample_curve(CurveMeasure((tuple(a), tuple(b)), cv.density), 1e-4, mu.surface)
                    keep = (np.sum(pts * pts, axis=1) < 1.0) & (np.sum((pts - c) ** 2, axis=1) < region.radius**2)
                    total += float(np.sum(m[keep]))
                    continue
                total += cv.density * ln
            else:
                total += cv.density * _segment_length_in_ball(a, b, c, region.radius)
    return total


def total_mass(mu: MeasureSpec, region: Ball | None = None) -> float:
    """Mass of ``mu`` in a ball (default: the whole surface)."""
    region = region or _whole_region(mu.surface)
    if not mu.finite_mass and not np.isfinite(region.radius):
        return float("inf")
    mass = 0.0
    if mu.ac:
        if mu.surface is SurfaceKind.SPHERE:
            mass += _cap_integral(mu.density, np.asarray(region.center), region.radius)
        else:
            rad = region.radius
            c = np.asarray(region.center, dtype=float)
            if mu.surface is SurfaceKind.DISC and np.allclose(c, 0):
                rad = min(rad, 1.0)
            mass += _polar_integral(mu.density, c, rad)
    return mass + _curve_mass(mu, region)


def pair(mu: MeasureSpec, psi: Callable, support_radius: float | None = None, center=(0.0, 0.0)) -> float:
    """``int psi dmu`` for a continuous test function.

    On the plane ``psi`` must be compactly supported; pass the radius of a
    ball (about ``center``) containing its support.
    """
    if mu.surface is SurfaceKind.PLANE and (support_radius is None or not np.isfinite(support_radius)):
        raise ValueError("test functions on the plane must be compactly supported")
    if mu.surface is SurfaceKind.SPHERE:
        grid = SphereGrid(128)
        n = grid.unit_vectors
        val = grid.integrate(psi(n) * mu.density(n)) if mu.ac else 0.0
        for cv in mu.curves:
            pts, m = sample_curve(cv, 1e-3, mu.surface)
            val += float(np.sum(psi(pts) * m))
        return float(val)
    rad = support_radius if support_radius is not None else 1.0
    c = np.asarray(center, dtype=float)
    if mu.surface is SurfaceKind.DISC and np.allclose(c, 0):
        rad = min(rad, 1.0)
    val = _polar_integral(lambda p: psi(p) * mu.density(p), c, rad) if mu.ac else 0.0
    for cv in mu.curves:
        pts, m = sample_curve(cv, 1e-3 * max(rad, 1.0), mu.surface)
        keep = np.sum((pts - c) ** 2, axis=1) < rad * rad
        if mu.surface is SurfaceKind.DISC:
            keep &= np.sum(pts * pts, axis=1) < 1.0
        val += float(np.sum(psi(pts[keep]) * m[keep]))
    return float(val)


# ---------------------------------------------------------------------------
# smoothing


def kernel_profile(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Unnormalized radial mollifier on ``[0, 1]`` (argument is distance / h)."""
    if name == "bump":
        return lambda s: np.where(s < 1.0, (1.0 - np.minimum(s, 1.0) ** 2) ** 3, 0.0)
    if name == "gaussian":
        return lambda s: np.where(s < 1.0, np.exp(-4.5 * s * s), 0.0)
    raise ValueError(f"unknown mollifier {name!r}")


@dataclass(frozen=True)
class SmoothedMetric:
    h: float
    field: np.ndarray
    grid: ChartGrid | SphereGrid
    kernel: str = "bump"

    def volume(self) -> float:
        return self.grid.integrate(self.field)

    def pair(self, psi: Callable) -> float:
        if isinstance(self.grid, SphereGrid):
            return self.grid.integrate(psi(self.grid.unit_vectors) * self.field)
        return self.grid.integrate(psi(self.grid.points) * self.field)


def _flat_kernel(h: float, dx: float, profile: Callable) -> np.ndarray | None:
    k = int(np.floor(h / dx))
    if k < 1:
        return None
    o = np.arange(-k, k + 1) * dx
    K = profile(np.hypot(o[:, None], o[None, :]) / h)
    if K.sum() <= 0:
        return None
    return K / (K.sum() * dx * dx)


def _deposit_cic(grid: ChartGrid, pts: np.ndarray, masses: np.ndarray, out: np.ndarray) -> None:
    g = (pts + grid.R) / grid.dx - 0.5
    i0 = np.floor(g).astype(int)
    f = g - i0
    for di in (0, 1):
        for dj in (0, 1):
            w = (f[:, 0] if di else 1 - f[:, 0]) * (f[:, 1] if dj else 1 - f[:, 1])
            ii, jj = i0[:, 0] + di, i0[:, 1] + dj
            ok = (ii >= 0) & (ii < grid.n) & (jj >= 0) & (jj < grid.n)
            np.add.at(out, (ii[ok], jj[ok]), masses[ok] * w[ok] / grid.cell_area)


def _deposit_kernel(grid: ChartGrid, pts: np.ndarray, masses: np.ndarray, h: float, profile, out) -> None:
    k = int(np.ceil(h / grid.dx)) + 1
    offs = np.arange(-k, k + 1)
    for p, m in zip(pts, masses):
        ci = int(np.round((p[0] + grid.R) / grid.dx - 0.5))
        cj = int(np.round((p[1] + grid.R) / grid.dx - 0.5))
        ii = np.clip(ci + offs, 0, grid.n - 1)
        jj = np.clip(cj + offs, 0, grid.n - 1)
        ii, jj = np.unique(ii), np.unique(jj)
        dxs = grid.coords[ii][:, None] - p[0]
        dys = grid.coords[jj][None, :] - p[1]
        K = profile(np.hypot(dxs, dys) / h)
        s = K.sum()
        if s <= 0:
            _deposit_cic(grid, p[None, :], np.array([m]), out)
            continue
        out[np.ix_(ii, jj)] += m * K / (s * grid.cell_area)


def smooth(mu: MeasureSpec, h: float, grid: ChartGrid | SphereGrid, kernel: str = "bump") -> SmoothedMetric:
    """Smooth, strictly positive conformal factor approximating ``mu`` at scale ``h``.

    Plane: restrict to B_{1/h}, mollify, add ``h`` times the round background.
    Disc: restrict to B_{1-2h}, mollify, add ``h``.  Sphere: geodesic mollification.
    """
    if h <= 0:
        raise ValueError("smoothing scale must be positive")
    profile = kernel_profile(kernel)
    if mu.surface is SurfaceKind.SPHERE:
        if not isinstance(grid, SphereGrid):
            raise TypeError("sphere measures are smoothed on a SphereGrid")
        return SmoothedMetric(h, _smooth_sphere(mu, h, grid, profile), grid, kernel)
    if not isinstance(grid, ChartGrid):
        raise TypeError("chart measures are smoothed on a ChartGrid")
    if mu.surface is SurfaceKind.DISC:
        if h >= 0.5:
            raise ValueError("disc smoothing needs h < 1/2")
        keep_radius = 1.0 - 2.0 * h
    else:
        keep_radius = 1.0 / h
    pts = grid.points
    r = grid.r
    rho = np.zeros((grid.n, grid.n))
    if mu.ac:
        dens = mu.density(pts) * (r < keep_radius)
        K = _flat_kernel(h, grid.dx, profile)
        rho += dens if K is None else fftconvolve(dens, K, mode="same") * grid.cell_area
    for cv in mu.curves:
        sp_, ms = sample_curve(cv, min(h / 4, grid.dx / 2), mu.surface)
        keep = np.sum(sp_ * sp_, axis=1) < keep_radius**2
        if h >= 2 * grid.dx:
            _deposit_kernel(grid, sp_[keep], ms[keep], h, profile, rho)
        else:
            _deposit_cic(grid, sp_[keep], ms[keep], rho)
    rho = np.maximum(rho, 0.0)
    if mu.surface is SurfaceKind.PLANE:
        rho = rho + h * round_background(pts)
    else:
        rho = rho + h
    return SmoothedMetric(h, rho, grid, kernel)


def _smooth_sphere(mu: MeasureSpec, h: float, grid: SphereGrid, profile) -> np.ndarray:
    n = grid.unit_vectors.reshape(-1, 3)
    W = grid.weights.ravel()
    src_pts, src_m = [], []
    if mu.ac:
        src_pts.append(n)
        src_m.append(mu.density(n) * W)
    for cv in mu.curves:
        p, m = sample_curve(cv, h / 4, mu.surface)
        src_pts.append(p)
        src_m.append(m)
    out = np.zeros(n.shape[0])
    if not src_pts:
        return out.reshape(grid.shape)
    P = np.concatenate(src_pts)
    M = np.concatenate(src_m)
    tree = cKDTree(n)
    chord = 2 * np.sin(min(h, np.pi) / 2)
    neigh = tree.query_ball_point(P, chord)
    for p, m, nb in zip(P, M, neigh):
        if m == 0:
            continue
        if not nb:
            j = tree.query(p)[1]
            out[j] += m / W[j]
            continue
        nb = np.asarray(nb)
        d = np.arccos(np.clip(n[nb] @ p, -1, 1))
        K = profile(d / h)
        s = np.sum(K * W[nb])
        if s <= 0:
            j = tree.query(p)[1]
            out[j] += m / W[j]
            continue
        out[nb] += m * K / s
    return out.reshape(grid.shape)


# ---------------------------------------------------------------------------
# ordering


def _curve_density_at(curves: Iterable[CurveMeasure], p: np.ndarray, tol: float) -> float:
    tot = 0.0
    for cv in curves:
        V = cv.vertices
        a, b = V[:-1], V[1:]
        d = b - a
        L2 = np.sum(d * d, axis=1)
        s = np.clip(np.sum((p - a) * d, axis=1) / np.where(L2 > 0, L2, 1), 0, 1)
        dist = np.linalg.norm(a + s[:, None] * d - p, axis=1)
        if np.any(dist < tol):
            tot += cv.density
    return tot


def is_leq(nu1: MeasureSpec, nu2: MeasureSpec, check_radius: float | None = None, n: int = 201) -> bool:
    """Sufficient test for ``nu1 <= nu2``.

    True when the densities are ordered at every check node and every curve
    of ``nu1`` lies on curves of ``nu2`` carrying at least its linear density.
    A False answer does not prove the measures are unordered.
    """
    if nu1.surface is not nu2.surface:
        raise ValueError("measures live on different surfaces")
    tol = 1e-12
    if nu1.ac:
        if nu1.surface is SurfaceKind.SPHERE:
            pts = SphereGrid(48).unit_vectors
        else:
            R = check_radius or (1.0 if nu1.surface is SurfaceKind.DISC else _default_check_radius(nu1, nu2))
            pts = ChartGrid(R, n).points
        d1, d2 = nu1.density(pts), nu2.density(pts)
        if np.any(d1 > d2 * (1 + 1e-12) + tol):
            return False
    for cv in nu1.curves:
        if cv.density == 0:
            continue
        V = cv.vertices
        samples = np.concatenate([V, 0.5 * (V[:-1] + V[1:])])
        for p in samples:
            if _curve_density_at(nu1.curves, p, 1e-9) > _curve_density_at(nu2.curves, p, 1e-9) + tol:
                return False
    return True


def _default_check_radius(*mus: MeasureSpec) -> float:
    R = 4.0
    for mu in mus:
        for a in mu.ac:
            if a.kind == "gaussian":
                c = np.asarray(a.params.get("center", (0, 0)), dtype=float)
                R = max(R, float(np.linalg.norm(c)) + 8 * float(a.params["sigma"]))
            elif a.kind == "table":
                R = max(R, float(a.params["R"]))
    return R
