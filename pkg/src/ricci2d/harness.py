"""Scenarios, invariant checks, reports and the ``ricci2d`` command line."""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .flow import (
    BoundaryMode,
    NoFlowError,
    Trajectory,
    maximal_time,
    run_exhaustion,
    run_from_measure,
)
from .geometry import ChartGrid, SphereGrid, SurfaceKind, curvature, hyperbolic_volume
from .measure import AtomicMeasureError, MeasureSpec, is_leq, pair, total_mass

SCHEMA_VERSION = 1

CHECKS = (
    "area_law",
    "area_tracking",
    "chen",
    "ordering",
    "mass_gain",
    "plane_contraction",
    "uniqueness",
    "exhaustion",
    "potential",
    "deeper_bound",
)

DEFAULT_TOLERANCES = {
    "area_law": 1e-3,
    "area_tracking": 0.02,
    "chen": None,  # 10 dt
    "ordering": 1e-8,
    "mass_gain": 0.0,
    "plane_contraction": 0.0,
    "uniqueness": 5e-3,
    "exhaustion": 1e-9,
    "potential": None,  # 5 dx² ‖u‖ (charts), 1e-6 (sphere)
    "deeper_bound": 1e-9,
}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario."""


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    name: str
    measure: MeasureSpec
    t_end: float
    R: float | None = None
    R_list: list = field(default_factory=list)
    h_list: list = field(default_factory=lambda: [0.05])
    delta_list: list = field(default_factory=lambda: [1e-3])
    n: int = 256
    L: int = 32
    dt: float = 1e-2
    ratio: float | None = 1.25
    kernels: list = field(default_factory=lambda: ["bump"])
    mode: str = "collar"
    checks: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def surface(self) -> SurfaceKind:
        return self.measure.surface

    def tolerance(self, check: str):
        return self.tolerances.get(check, DEFAULT_TOLERANCES.get(check))

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        version = d.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario version {version}")
        for key in ("name", "measure", "t_end"):
            if key not in d:
                raise ScenarioError(f"scenario is missing '{key}'")
        try:
            mu = MeasureSpec.from_dict(d["measure"])
        except AtomicMeasureError:
            raise
        except (ValueError, KeyError, TypeError) as e:
            raise ScenarioError(f"bad measure: {e}") from e
        known = set(cls.__dataclass_fields__) | {"version", "surface"}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        if "surface" in d and SurfaceKind(d["surface"]) is not mu.surface:
            raise ScenarioError("scenario surface disagrees with the measure")
        kw = {k: v for k, v in d.items() if k not in ("version", "surface", "measure")}
        try:
            sc = cls(measure=mu, **kw)
        except TypeError as e:
            raise ScenarioError(str(e)) from e
        sc.validate()
        return sc

    def validate(self) -> None:
        def positive_list(name):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals:
                raise ScenarioError(f"'{name}' must be a nonempty list")
            if any(not isinstance(v, (int, float)) or v < 0 for v in vals):
                raise ScenarioError(f"'{name}' entries must be nonnegative numbers")

        positive_list("h_list")
        positive_list("delta_list")
        if not self.kernels or any(k not in ("bump", "gaussian") for k in self.kernels):
            raise ScenarioError("kernels must be a nonempty subset of {'bump', 'gaussian'}")
        if not isinstance(self.t_end, (int, float)) or self.t_end <= max(self.delta_list):
            raise ScenarioError("t_end must exceed every start time")
        if self.dt <= 0:
            raise ScenarioError("dt must be positive")
        if self.mode not in ("collar", "geodesic"):
            raise ScenarioError("mode must be 'collar' or 'geodesic'")
        for c in self.checks:
            if c not in CHECKS:
                raise ScenarioError(f"unknown check '{c}'")
        if self.surface is SurfaceKind.PLANE:
            if self.R is None and not self.R_list:
                raise ScenarioError("plane scenarios need a chart radius R")
        if self.R_list:
            positive_list("R_list")
        if self.surface is not SurfaceKind.DISC and not self.measure.is_trivial:
            T = maximal_time(self.measure)
            if self.t_end >= T:
                raise ScenarioError(f"t_end = {self.t_end} is not below the maximal time {T:.6g}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "measure"}
        return {"version": SCHEMA_VERSION, "surface": self.surface.value, "measure": self.measure.to_dict(), **d}

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        p = Path(path)
        if not p.is_file():
            raise ScenarioError(f"scenario file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"scenario is not valid JSON: {e}") from e
        return cls.from_dict(d)

    def run(self, h: float | None = None, delta: float | None = None, kernel: str | None = None,
            measure: MeasureSpec | None = None, R: float | None = None, t_end: float | None = None,
            snapshot_times=None) -> Trajectory:
        return run_from_measure(
            measure or self.measure,
            R=R if R is not None else self.R,
            h=self.h_list[0] if h is None else h,
            delta=self.delta_list[0] if delta is None else delta,
            t_end=self.t_end if t_end is None else t_end,
            n=self.n, L=self.L, dt=self.dt, ratio=self.ratio,
            kernel=kernel or self.kernels[0], mode=BoundaryMode(self.mode),
            snapshot_times=snapshot_times,
        )


# ---------------------------------------------------------------------------
# report


@dataclass
class CheckResult:
    name: str
    passed: bool | None
    measured: dict
    prediction: str
    tolerance: float | None
    skipped: str | None = None

    def to_dict(self) -> dict:
        return _jsonify(asdict(self))


@dataclass
class Report:
    scenario: str
    entries: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(e.passed is not False for e in self.entries)

    def add(self, entry: CheckResult) -> None:
        if any(e.name == entry.name for e in self.entries):
            raise ValueError(f"check '{entry.name}' already reported")
        self.entries.append(entry)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "scenario": self.scenario,
            "passed": self.passed,
            "entries": [e.to_dict() for e in self.entries],
            "runtime": self.runtime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        if d.get("version") != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported report version {d.get('version')}")
        entries = [CheckResult(**e) for e in d["entries"]]
        return cls(d["scenario"], entries, d.get("runtime", {}), d["version"])


def _jsonify(x):
    if isinstance(x, dict):
        return {str(k): _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonify(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonify(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# helpers


def _stencil_nodes(traj: Trajectory) -> np.ndarray:
    """Nodes where the flow equation holds and the 5-point stencil stays on the chart."""
    g = traj.grid
    if isinstance(g, SphereGrid):
        return np.ones(g.shape, dtype=bool)
    m = traj.interior().copy()
    ins = g.inside
    m[1:-1, 1:-1] &= ins[:-2, 1:-1] & ins[2:, 1:-1] & ins[1:-1, :-2] & ins[1:-1, 2:]
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = False
    return m


def _max_step(traj: Trajectory) -> float:
    ts = traj.step_times if traj.step_times is not None else traj.times[1:]
    full = np.concatenate([[traj.t_start], np.asarray(ts)])
    return float(np.max(np.diff(full))) if full.size > 1 else 0.0


def chen_series(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per snapshot: min relative decrease of ``u/s`` since the previous snapshot, and min of ``K + 1/(2s)``.

    ``s`` is the time elapsed since the trajectory start, where the flow is
    started from smooth data.  A negative first entry is a monotonicity defect.
    Entries without a predecessor (or with ``s = 0``) are NaN.
    """
    m = _stencil_nodes(traj)
    t0 = traj.t_start
    n = len(traj.snapshots)
    dec, kmin = np.full(n, np.nan), np.full(n, np.nan)
    prev = None
    for i, snap in enumerate(traj.snapshots):
        s = snap.t - t0
        if s <= 0:
            continue
        q = snap.u[m] / s
        if prev is not None:
            dec[i] = float(np.min((prev - q) / prev))
        K = curvature(snap.u, traj.grid)[m]
        kmin[i] = float(np.nanmin(K + 1.0 / (2.0 * s)))
        prev = q
    return dec, kmin


def timeseries_rows(traj: Trajectory) -> list[dict]:
    dec, kmin = chen_series(traj)
    area = traj.area()
    return [
        {
            "t": s.t,
            "area": float(a),
            "min_u_over_t_defect": float(d),
            "min_K_plus_half_t": float(k),
            "residuals": float(s.diagnostics.residual),
        }
        for s, a, d, k in zip(traj.snapshots, area, dec, kmin)
    ]


def write_csv(rows: list[dict], path: str | Path) -> None:
    cols = ["t", "area", "min_u_over_t_defect", "min_K_plus_half_t", "residuals"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})


def _shared(a: Trajectory, b: Trajectory):
    for sa in a.snapshots:
        for sb in b.snapshots:
            if math.isclose(sa.t, sb.t, rel_tol=1e-9, abs_tol=1e-12):
                yield sa, sb
                break


def sup_relative(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    d = np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))
    if mask is not None:
        d = d[mask]
    return float(np.nanmax(d))


# ---------------------------------------------------------------------------
# checks


def check_area_law(traj: Trajectory, predicted_slope: float | None = None, tol: float = 1e-3,
                   t_range=None, mask: np.ndarray | None = None) -> CheckResult:
    """Least-squares slope of area against time versus the predicted rate.

    Sphere: ``−8π``.  Plane: ``−μ(M)/T = −4π``.  Disc: a prediction is required.
    """
    times = traj.times
    area = traj.area(mask)
    sel = np.ones(times.size, dtype=bool)
    if t_range is not None:
        sel = (times >= t_range[0] - 1e-12) & (times <= t_range[1] + 1e-12)
    if sel.sum() < 3:
        raise ValueError("area law needs at least three snapshots")
    if predicted_slope is None:
        if traj.surface is SurfaceKind.SPHERE:
            predicted_slope, why = -8 * math.pi, "area slope -8π"
        elif traj.surface is SurfaceKind.PLANE:
            predicted_slope, why = -4 * math.pi, "area slope -μ(M)/T = -4π"
        else:
            raise ValueError("disc area law needs an explicit prediction")
    else:
        why = f"area slope {predicted_slope:.8g}"
    slope, icpt = np.polyfit(times[sel], area[sel], 1)
    fit_res = float(np.max(np.abs(area[sel] - (slope * times[sel] + icpt))))
    rel = abs(slope - predicted_slope) / abs(predicted_slope)
    measured = {"slope": slope, "relative_error": rel, "fit_residual": fit_res,
                "snapshots": int(sel.sum()), "t_range": [float(times[sel][0]), float(times[sel][-1])]}
    if traj.extinction_time is not None:
        measured["extinction_time"] = traj.extinction_time
    return CheckResult("area_law", bool(rel <= tol), measured, why, tol)


def check_area_tracking(traj: Trajectory, mass: float | None = None, tol: float = 0.02,
                        t_max: float | None = None) -> CheckResult:
    """Plane: chart area against ``(1 − t/T) μ(M)`` with ``T = μ(M)/4π``, relative to the prediction."""
    if traj.surface is not SurfaceKind.PLANE:
        raise ValueError("area tracking is a plane check")
    mass = total_mass(traj.measure) if mass is None else mass
    T = mass / (4 * math.pi)
    times, area = traj.times, traj.area()
    sel = times <= (t_max if t_max is not None else times[-1]) + 1e-12
    pred = (1 - times[sel] / T) * mass
    rel = np.abs(area[sel] - pred) / pred
    k = int(np.argmax(rel))
    measured = {
        "max_relative_deviation": float(rel[k]),
        "at_time": float(times[sel][k]),
        "mean_offset_over_4pi": float(np.mean(area[sel] - pred) / (4 * math.pi)),
        "h": traj.h,
    }
    return CheckResult("area_tracking", bool(rel[k] <= tol), measured, "area = (1 - t/T) μ(M)", tol)


def check_chen(traj: Trajectory, tol: float | None = None) -> CheckResult:
    """Monotonicity of ``u/s`` and ``K ≥ −1/(2s)`` with ``s`` the elapsed time."""
    tol = 10 * _max_step(traj) if tol is None else tol
    dec, kmin = chen_series(traj)
    worst_dec = float(np.nanmin(dec)) if np.isfinite(dec).any() else 0.0
    worst_k = float(np.nanmin(kmin)) if np.isfinite(kmin).any() else 0.0
    measured = {"min_relative_decrease": worst_dec, "min_K_plus_half_s": worst_k, "max_step": _max_step(traj)}
    ok = worst_dec >= -tol and worst_k >= -tol
    return CheckResult("chen", bool(ok), measured, "u/t nonincreasing, K >= -1/(2t)", tol)


def check_ordering(upper: Trajectory, lower: Trajectory, tol: float = 1e-8) -> CheckResult:
    """``u_upper ≥ u_lower`` nodewise at every shared snapshot, up to a relative ``tol``."""
    if type(upper.grid) is not type(lower.grid) or upper.grid != lower.grid:
        raise ValueError("ordering needs trajectories on the same grid")
    g = upper.grid
    m = np.ones(g.shape, bool) if isinstance(g, SphereGrid) else g.inside
    violations, worst, count = 0, -np.inf, 0
    for a, b in _shared(upper, lower):
        ua, ub = a.u[m], b.u[m]
        rel = (ub - ua) / np.maximum(ua, ub)
        violations += int(np.sum(rel > tol))
        worst = max(worst, float(np.max(rel)))
        count += 1
    if count == 0:
        raise ValueError("no shared snapshots")
    measured = {"violations": violations, "max_relative_excess": worst, "snapshots": count}
    return CheckResult("ordering", violations == 0, measured, "u_mu(t) >= u_nu(t) when nu <= mu", tol)


def mass_gain_table(traj: Trajectory, R: float = 1.0, R_tilde: float = 2.0, k: int = 5) -> list[dict]:
    """``(s, t, lhs, rhs)`` over a ``k × k`` grid of snapshot times (pairs with ``s ≤ t``)."""
    g = traj.grid
    if isinstance(g, SphereGrid):
        raise ValueError("mass gain is a chart check")
    if R_tilde >= g.R - g.collar_width:
        raise ValueError("the outer ball must stay inside the chart")
    eta = hyperbolic_volume(R, R_tilde)
    times = traj.times[1:] if traj.times.size > k else traj.times
    idx = np.unique(np.linspace(0, times.size - 1, k).round().astype(int))
    pick = times[idx]
    vin = {t: g.integrate(traj.at(t).u, g.ball(R)) for t in pick}
    vout = {t: g.integrate(traj.at(t).u, g.ball(R_tilde)) for t in pick}
    rows = []
    for s in pick:
        for t in pick:
            if s > t:
                continue
            rows.append({"s": float(s), "t": float(t), "lhs": vin[t], "rhs": (t - s) * eta + vout[s]})
    return rows


def check_mass_gain(traj: Trajectory, R: float = 1.0, R_tilde: float = 2.0, k: int = 5, tol: float = 0.0) -> CheckResult:
    rows = mass_gain_table(traj, R, R_tilde, k)
    margins = [r["rhs"] - r["lhs"] for r in rows]
    worst = min(margins)
    rel = [m / r["rhs"] for m, r in zip(margins, rows)]
    measured = {"eta": hyperbolic_volume(R, R_tilde), "min_margin": worst, "min_relative_margin": min(rel),
                "pairs": len(rows), "table": rows}
    return CheckResult("mass_gain", bool(min(rel) >= -tol), measured,
                       "Vol_t(B_R) <= (t - s) eta + Vol_s(B_R~)", tol)


# plane contraction ------------------------------------------------------------


def tail_epsilon(lower: Trajectory, r_min: float = 2.0, r_max: float | None = None) -> float:
    """Largest ``ε`` with ``ũ(x, t) ≥ ε t / (|x| log|x|)²`` on the resolved tail, over all snapshots."""
    g = lower.grid
    r_max = g.R - g.collar_width - 2 * g.dx if r_max is None else r_max
    m = (g.r >= r_min) & (g.r <= r_max) & lower.interior()
    if not m.any():
        return 0.0
    w = (g.r[m] * np.log(g.r[m])) ** 2
    eps = np.inf
    for s in lower.snapshots:
        if s.t <= 0:
            continue
        eps = min(eps, float(np.min(s.u[m] * w / s.t)))
    return eps


def _contraction_terms(upper, lower, R, m, s, t):
    g = upper.grid
    d_t = upper.at(t).u - lower.at(t).u
    d_s = upper.at(s).u - lower.at(s).u
    lhs = g.integrate(np.where(g.inside, d_t, 0.0), g.ball(R)) ** (1 - m)
    first = g.integrate(np.where(g.inside, d_s, 0.0), g.ball(R * R)) ** (1 - m)
    shape = (t ** (1 - m) - s ** (1 - m))
    return lhs, first, shape


def fit_c0(upper: Trajectory, lower: Trajectory, R: float, m: float, pairs) -> float:
    """Smallest ``c₀`` for which the contraction estimate holds on the calibration pairs."""
    eps = tail_epsilon(lower)
    if not eps > 0:
        raise ValueError("tail hypothesis fails on the calibration scenario")
    c0 = 0.0
    for s, t in pairs:
        lhs, first, shape = _contraction_terms(upper, lower, R, m, s, t)
        if shape > 0:
            c0 = max(c0, (lhs - first) * eps**m * math.log(R) ** (1 - m) / shape)
    return c0


def check_plane_contraction(upper: Trajectory, lower: Trajectory, R: float, m: float, c0: float, pairs,
                            tol: float = 0.0) -> CheckResult:
    g = upper.grid
    if upper.surface is not SurfaceKind.PLANE:
        raise ValueError("contraction estimate is a plane check")
    if R * R > g.R - g.collar_width:
        raise ValueError("chart must cover B_{R^2}")
    if not 0 < m < 1:
        raise ValueError("m must lie in (0, 1)")
    eps = tail_epsilon(lower)
    pred = "(int_B_R [u - u~](t))^(1-m) <= (int_B_R² [u - u~](s))^(1-m) + c0 / (eps^m (log R)^(1-m)) [t^(1-m) - s^(1-m)]"
    if not eps > 0:
        return CheckResult("plane_contraction", None, {"epsilon": eps}, pred, tol,
                           skipped="lower flow fails the tail hypothesis")
    rows = []
    for s, t in pairs:
        lhs, first, shape = _contraction_terms(upper, lower, R, m, s, t)
        rhs = first + c0 / (eps**m * math.log(R) ** (1 - m)) * shape
        rows.append({"s": s, "t": t, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs})
    worst = min(r["margin"] for r in rows)
    measured = {"epsilon": eps, "c0": c0, "m": m, "R": R, "min_margin": worst, "table": rows}
    return CheckResult("plane_contraction", bool(worst >= -tol), measured, pred, tol)


# uniqueness -------------------------------------------------------------------


@dataclass
class UniquenessTable:
    h_list: list
    kernels: list
    distances: list  # family-to-family distance per level
    fields: dict  # (kernel, h) -> u(t*)
    limits: dict  # kernel -> extrapolated limit
    limit_distance: float
    extinction: dict


def uniqueness_table(scenario: Scenario, t_star: float, delta: float | None = None,
                     probe: np.ndarray | None = None) -> UniquenessTable:
    if len(scenario.kernels) < 2:
        raise ValueError("uniqueness needs at least two mollifier families")
    hs = sorted(scenario.h_list, reverse=True)
    fields, ext = {}, {}
    sphere = scenario.surface is SurfaceKind.SPHERE
    for kern in scenario.kernels[:2]:
        for h in hs:
            tr = scenario.run(h=h, delta=delta, kernel=kern, snapshot_times=[t_star])
            if sphere:
                ext[(kern, h)] = tr.extinction_time
            fields[(kern, h)] = tr.at(t_star).u
            grid = tr.grid
    if probe is None:
        probe = np.ones(grid.shape, bool) if sphere else (grid.active & grid.ball(0.8 * grid.R))
    ka, kb = scenario.kernels[:2]
    dists = [sup_relative(fields[(ka, h)], fields[(kb, h)], probe) for h in hs]
    limits = {}
    for k in (ka, kb):
        if len(hs) >= 2:
            # Richardson with the observed second-order smoothing error
            a, b = fields[(k, hs[-2])], fields[(k, hs[-1])]
            r = (hs[-2] / hs[-1]) ** 2
            limits[k] = b + (b - a) / (r - 1)
        else:
            limits[k] = fields[(k, hs[-1])]
    ld = sup_relative(limits[ka], limits[kb], probe)
    return UniquenessTable(hs, [ka, kb], dists, fields, limits, ld, ext)


def check_uniqueness(scenario: Scenario, t_star: float = 0.1, tol: float = 5e-3, delta: float | None = None,
                     table: UniquenessTable | None = None) -> CheckResult:
    tab = table or uniqueness_table(scenario, t_star, delta)
    d = tab.distances
    shrinking = all(b < a for a, b in zip(d, d[1:]))
    measured = {"h_list": tab.h_list, "kernels": tab.kernels, "distances": d,
                "limit_distance": tab.limit_distance, "strictly_decreasing": shrinking}
    ok = shrinking and d[-1] <= tol
    if tab.extinction:
        T = maximal_time(scenario.measure)
        dt = scenario.dt
        errs = {f"{k}:{h}": (v - T if v is not None else None) for (k, h), v in tab.extinction.items()}
        measured["extinction_error"] = errs
        ok = ok and all(e is not None and abs(e) <= dt for e in errs.values())
    return CheckResult("uniqueness", bool(ok), measured,
                       "approximating families converge to one flow", tol)


# exhaustion / potential / deeper bound ---------------------------------------


def check_exhaustion(scenario: Scenario, tol: float = 1e-9, dx: float | None = None) -> CheckResult:
    if scenario.surface is not SurfaceKind.PLANE or len(scenario.R_list) < 2:
        raise ValueError("exhaustion needs a plane scenario with R_list")
    dx = dx or scenario.params.get("exhaustion", {}).get("dx", 0.05)
    ex = run_exhaustion(scenario.measure, scenario.R_list, h=scenario.h_list[0], t_end=scenario.t_end,
                        dx=dx, delta=scenario.delta_list[0], dt=scenario.dt, ratio=scenario.ratio,
                        tol=tol, kernel=scenario.kernels[0], mode=BoundaryMode(scenario.mode))
    measured = {"R_list": ex.R_list, "violations": ex.violations, "max_excess": ex.max_violation}
    return CheckResult("exhaustion", ex.violations == 0, measured, "u_R decreases as R grows", tol)


def weak_test_functions(traj: Trajectory) -> list:
    """Bump test functions ``(centre, radius)`` supported well inside the chart."""
    g = traj.grid
    inner = g.R - g.collar_width - 4 * g.dx
    return [((0.0, 0.0), 0.5 * inner), ((0.2 * inner, 0.1 * inner), 0.3 * inner), ((-0.3 * inner, 0.0), 0.4 * inner)]


def bump(center, radius):
    def psi(p):
        s2 = ((p[..., 0] - center[0]) ** 2 + (p[..., 1] - center[1]) ** 2) / radius**2
        return np.where(s2 < 1, (1 - s2) ** 3, 0.0)

    return psi


def check_potential(traj: Trajectory, tau: float | None = None, tol_weak: float = 0.01) -> CheckResult:
    """Elliptic and evolution identities and, on charts, the weak identity for the trace."""
    from .potential import build_potential, elliptic_residual, evolution_residual, extract_phi0, sphere_potential
    from .potential import weak_laplacian_pairing

    dt = _max_step(traj)
    if isinstance(traj.grid, SphereGrid):
        sp = sphere_potential(traj, tau)
        ell, evo = float(sp.elliptic.max()), float(sp.evolution.max())
        tol_ell = 1e-6
        measured = {"elliptic": ell, "evolution": evo, "elliptic_tol": tol_ell, "evolution_tol": 5 * dt,
                    "negative": sp.negative}
        ok = ell <= tol_ell and evo <= 5 * dt and sp.negative
        return CheckResult("potential", bool(ok), measured, "Δ₀φ = u - (1-2t), ∂φ/∂t = log(Δ₀φ + 1 - 2t)", tol_ell)
    g = traj.grid
    tau = traj.times[-1] if tau is None else tau
    pf = build_potential(traj, tau)
    rep = extract_phi0(pf)
    ell = elliptic_residual(pf)
    usup = max(float(np.nanmax(np.abs(u[pf.interior()]))) for u in pf.u)
    tol_ell = 5 * g.dx**2 * usup
    evo = float(evolution_residual(pf).max())
    weak = []
    for c, r in weak_test_functions(traj):
        psi = bump(c, r)
        a = weak_laplacian_pairing(pf, psi)
        b = pair(traj.measure, psi, support_radius=r, center=c)
        weak.append({"center": c, "radius": r, "lhs": a, "rhs": b, "relative": abs(a - b) / abs(b)})
    worst_weak = max(w["relative"] for w in weak)
    measured = {"elliptic": float(ell.max()), "elliptic_tol": tol_ell, "evolution": evo, "evolution_tol": 5 * dt,
                "weak": weak, "weak_max_relative": worst_weak, "neg_inf_nodes": int(rep.neg_inf.sum())}
    ok = ell.max() <= tol_ell and evo <= 5 * dt and worst_weak <= tol_weak
    return CheckResult("potential", bool(ok), measured, "Δφ = u, ∂φ/∂t = log Δφ, Δφ₀ = μ weakly", tol_weak)


def check_deeper(traj: Trajectory, eps_list=(0.02, 0.01, 0.005), tol: float = 1e-9) -> CheckResult:
    from .potential import check_deeper_bound, sphere_potential

    missing = [e for e in eps_list if not np.any(np.isclose(traj.times, e, rtol=1e-9, atol=1e-12))]
    if missing:
        raise ValueError(f"trajectory has no snapshots at eps = {missing}")
    sp = sphere_potential(traj)
    rep = check_deeper_bound(sp, eps_list, tol=tol)
    worst = max(rep.violations.values())
    measured = {"violations": rep.violations, "alpha_times": rep.alpha_times, "alpha": rep.alpha,
                "alpha_monotone": rep.alpha_monotone, "kw_residuals": rep.kw_residuals}
    ok = worst <= tol and rep.alpha_monotone
    return CheckResult("deeper_bound", bool(ok), measured, "Φ_ε(t) <= φ(ε + t), α(t) -> 0", tol)


# ---------------------------------------------------------------------------
# campaign


def _run_check(c: str, scenario: Scenario, traj) -> CheckResult:
    tol = scenario.tolerance(c)
    cp = scenario.params.get(c, {})
    if c == "area_law":
        e = check_area_law(traj(), cp.get("predicted_slope"), tol, cp.get("t_range"))
    elif c == "area_tracking":
        e = check_area_tracking(traj(), tol=tol, t_max=cp.get("t_max"))
    elif c == "chen":
        e = check_chen(traj(), tol)
    elif c == "ordering":
        scale = cp.get("scale", 0.5)
        nu = scenario.measure.scaled(scale)
        if not is_leq(nu, scenario.measure):
            raise ScenarioError("ordering check needs nu <= mu")
        e = check_ordering(traj(), scenario.run(measure=nu), tol)
    elif c == "mass_gain":
        e = check_mass_gain(traj(), cp.get("R", 1.0), cp.get("R_tilde", 2.0), cp.get("k", 5), tol)
    elif c == "plane_contraction":
        e = _run_contraction(scenario, cp, tol)
    elif c == "uniqueness":
        e = check_uniqueness(scenario, cp.get("t_star", 0.1), tol)
    elif c == "exhaustion":
        e = check_exhaustion(scenario, tol)
    elif c == "potential":
        e = check_potential(traj(), cp.get("tau"), tol if tol is not None else 0.01)
    else:
        e = check_deeper(traj(), tuple(cp.get("eps_list", (0.02, 0.01, 0.005))), tol)
    return e


def verify(scenario: Scenario, checks=None, out: Path | None = None) -> tuple[Report, Trajectory | None]:
    if scenario.measure.is_trivial and scenario.surface is SurfaceKind.PLANE:
        raise NoFlowError("T = 0, no flow exists")
    checks = list(checks or scenario.checks)
    if not checks:
        raise ScenarioError("no checks requested")
    for c in checks:
        if c not in CHECKS:
            raise ScenarioError(f"unknown check '{c}'")
    if len(set(checks)) != len(checks):
        raise ScenarioError("each check may be requested once")
    start = time.perf_counter()
    report = Report(scenario.name)
    base = None

    # the deeper bound starts its comparison flows at snapshot times ε
    extra = None
    if "deeper_bound" in checks:
        extra = list(scenario.params.get("deeper_bound", {}).get("eps_list", (0.02, 0.01, 0.005)))

    def traj():
        nonlocal base
        if base is None:
            base = scenario.run(snapshot_times=extra)
        return base

    for c in checks:
        try:
            report.add(_run_check(c, scenario, traj))
        except ScenarioError:
            raise
        except ValueError as e:
            # check does not apply to this scenario
            raise ScenarioError(f"check '{c}': {e}") from e
    report.runtime = {
        "elapsed_s": time.perf_counter() - start,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": scenario.seed,
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
        if base is not None:
            write_csv(timeseries_rows(base), out / "timeseries.csv")
    return report, base


def _run_contraction(scenario: Scenario, cp: dict, tol: float) -> CheckResult:
    """Upper flow from μ, lower from ``scale·μ``; ``c₀`` fitted on the calibration pairs and frozen."""
    R, m = cp.get("R", 3.0), cp.get("m", 0.5)
    nu = scenario.measure.scaled(cp.get("scale", 0.5))
    # both flows stop before the smaller maximal time
    t_end = min(scenario.t_end, cp.get("t_end", 0.9 * maximal_time(nu)))
    upper = scenario.run(t_end=t_end)
    lower = scenario.run(measure=nu, t_end=t_end)
    times = [t for t in upper.times if t > upper.t_start]
    calib = cp.get("calibration_pairs") or [(times[0], times[len(times) // 2])]
    pairs = cp.get("pairs") or [(times[i], times[j]) for i in range(0, len(times), max(1, len(times) // 4))
                                for j in range(i + 1, len(times), max(1, len(times) // 4))]
    eps = tail_epsilon(lower)
    if not eps > 0:
        return CheckResult("plane_contraction", None, {"epsilon": eps}, "contraction estimate", tol,
                           skipped="lower flow fails the tail hypothesis")
    c0 = cp.get("c0")
    if c0 is None:
        c0 = fit_c0(upper, lower, R, m, calib)
    return check_plane_contraction(upper, lower, R, m, c0, pairs, tol)


def simulate(scenario: Scenario, out: Path | None = None) -> Trajectory:
    if scenario.measure.is_trivial and scenario.surface is SurfaceKind.PLANE:
        raise NoFlowError("T = 0, no flow exists")
    tr = scenario.run()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        tr.dump(out / "snapshots")
        write_csv(timeseries_rows(tr), out / "timeseries.csv")
        summary = {"version": SCHEMA_VERSION, "scenario": scenario.name, "snapshots": len(tr.snapshots),
                   "t_final": float(tr.times[-1]), "truncated": tr.truncated,
                   "extinction_time": tr.extinction_time}
        (out / "simulation.json").write_text(json.dumps(_jsonify(summary), indent=1))
    return tr


# ---------------------------------------------------------------------------
# CLI


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ricci2d", description="Conformal Ricci flow from rough initial measures.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run the scenario's flow and dump snapshots")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", default=None)
    v = sub.add_parser("verify", help="run checks and write a report")
    v.add_argument("--scenario", required=True)
    v.add_argument("--check", action="append", choices=CHECKS)
    v.add_argument("--out", default=None)
    r = sub.add_parser("report", help="summarize a report JSON")
    r.add_argument("--input", required=True)
    r.add_argument("--format", choices=("text", "json"), default="text")
    return ap


def _print_report(report: Report, stream=None) -> None:
    stream = stream or sys.stdout
    for e in report.entries:
        status = "SKIP" if e.passed is None else ("PASS" if e.passed else "FAIL")
        key = {k: v for k, v in e.measured.items() if isinstance(v, (int, float, bool))}
        brief = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in key.items())
        extra = f" ({e.skipped})" if e.skipped else ""
        print(f"{status} {e.name}: {brief} [tol={e.tolerance if e.tolerance is None else format(e.tolerance, '.3g')}]{extra}", file=stream)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            p = Path(args.input)
            if not p.is_file():
                raise ScenarioError(f"report file not found: {p}")
            try:
                rep = Report.from_dict(json.loads(p.read_text()))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ScenarioError(f"malformed report: {e}") from e
            if args.format == "json":
                print(json.dumps(rep.to_dict(), indent=1))
            else:
                _print_report(rep)
            return 0 if rep.passed else 1
        scenario = Scenario.load(args.scenario)
        out = Path(args.out) if args.out else None
        if args.command == "simulate":
            tr = simulate(scenario, out)
            print(f"simulated {scenario.name}: {len(tr.snapshots)} snapshots up to t = {tr.times[-1]:.6g}")
            return 0
        report, _ = verify(scenario, args.check, out)
        _print_report(report)
        return 0 if report.passed else 1
    except NoFlowError as e:
        print(str(e), file=sys.stderr)
        return 2
    except (ScenarioError, AtomicMeasureError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
