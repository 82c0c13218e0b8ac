"""Potential flows: Δφ = u, ∂φ/∂t = log Δφ, the initial trace φ₀, and comparison barriers.

The time integral of ``log u`` is the right-endpoint sum over every solver
step (stored with each snapshot), which is the quadrature that backward Euler
makes exact: the discrete identities ``Δ_h φ = u`` (charts) and
``Δ₀ φ = u − (1 − 2t)`` (sphere) then hold to solver tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import BoundaryMode, Trajectory
from .geometry import ChartGrid, SphereGrid, radial_hyperbolic_factor
from .poisson import solve_ball_dirichlet, solve_sphere

NEG_INF_FLOOR = -1.0e6


@dataclass
class PotentialField:
    grid: ChartGrid | SphereGrid
    times: np.ndarray
    phi: list
    tau: float
    phi_tau: np.ndarray
    lo: list  # int_tau^t chi_{u<=1} log u
    hi: list  # int_tau^t chi_{u>1} log u
    u: list
    phi0: np.ndarray | None = None
    shift: float = 0.0

    @property
    def sphere(self) -> bool:
        return isinstance(self.grid, SphereGrid)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"no potential snapshot at t = {t}")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.phi[self.index(t)]

    def interior(self) -> np.ndarray:
        """Nodes whose 5-point stencil stays on active nodes or the collar."""
        if self.sphere:
            return np.ones(self.grid.shape, dtype=bool)
        return self.grid.active

    def laplacian(self, F: np.ndarray) -> np.ndarray:
        return self.grid.laplacian(F)

    def shifted(self, c: float) -> "PotentialField":
        return replace(
            self,
            phi=[p + c for p in self.phi],
            phi_tau=self.phi_tau + c,
            phi0=None if self.phi0 is None else np.where(self.phi0 <= NEG_INF_FLOOR, self.phi0, self.phi0 + c),
            shift=self.shift + c,
        )


def _phi_tau(traj: Trajectory, u_tau: np.ndarray) -> np.ndarray:
    g = traj.grid
    if isinstance(g, SphereGrid):
        return solve_sphere(u_tau, g)
    phi = solve_ball_dirichlet(u_tau, 0.0, g)
    return phi - np.mean(phi[g.inside])


def build_potential(traj: Trajectory, tau: float, gauge: np.ndarray | None = None) -> PotentialField:
    """``φ(t) = φ_τ + ∫_τ^t log u`` with ``Δφ_τ = u(τ)`` (sphere: ``u(τ) − mean``).

    ``gauge`` adds a (discrete-)harmonic field to ``φ_τ``.
    """
    snap_tau = traj.at(tau)
    phi_tau = _phi_tau(traj, snap_tau.u)
    if gauge is not None:
        phi_tau = phi_tau + gauge
    lo = [s.log_lo - snap_tau.log_lo for s in traj.snapshots]
    hi = [s.log_hi - snap_tau.log_hi for s in traj.snapshots]
    phi = [phi_tau + a + b for a, b in zip(lo, hi)]
    return PotentialField(traj.grid, traj.times, phi, tau, phi_tau, lo, hi, [s.u for s in traj.snapshots])


# ---------------------------------------------------------------------------
# identities


def elliptic_residual(pf: PotentialField) -> np.ndarray:
    """Per snapshot sup of ``|Δφ − u|`` (sphere: ``|Δ₀φ − (u − ū)|``) on interior nodes."""
    out = []
    m = pf.interior()
    for phi, u in zip(pf.phi, pf.u):
        if pf.sphere:
            ubar = pf.grid.integrate(u) / (4 * np.pi)
            r = pf.grid.laplacian(phi) - (u - ubar)
        else:
            r = pf.laplacian(phi) - u
        out.append(float(np.max(np.abs(r[m]))))
    return np.array(out)


def evolution_residual(pf: PotentialField, sphere_offset=None) -> np.ndarray:
    """Per step sup of ``|(φ₂ − φ₁)/(t₂ − t₁) − log Δφ(t₂)|`` (sphere: ``log(Δ₀φ + 1 − 2t)``).

    The evaluation at the right endpoint matches the time discretization.
    ``sphere_offset(t)`` supplies the mean factor, default ``A(t)/4π``.
    """
    m = pf.interior()
    out = []
    for k in range(1, len(pf.phi)):
        dt = pf.times[k] - pf.times[k - 1]
        dphi = (pf.phi[k] - pf.phi[k - 1]) / dt
        lap = pf.grid.laplacian(pf.phi[k])
        if pf.sphere:
            off = sphere_offset(pf.times[k]) if sphere_offset else pf.grid.integrate(pf.u[k]) / (4 * np.pi)
            arg = lap + off
        else:
            arg = lap
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.abs(dphi - np.log(arg))
        out.append(float(np.max(r[m])))
    return np.array(out)


def midpoint_evolution_proxy(pf: PotentialField) -> np.ndarray:
    """``|Δ_tφ − log u(t_mid)|`` with ``log u`` interpolated linearly; reported, not asserted."""
    m = pf.interior()
    out = []
    for k in range(1, len(pf.phi)):
        dt = pf.times[k] - pf.times[k - 1]
        dphi = (pf.phi[k] - pf.phi[k - 1]) / dt
        mid = 0.5 * (np.log(pf.u[k]) + np.log(pf.u[k - 1]))
        out.append(float(np.max(np.abs(dphi - mid)[m])))
    return np.array(out)


# ---------------------------------------------------------------------------
# initial trace


@dataclass
class Phi0Report:
    phi0: np.ndarray
    neg_inf: np.ndarray
    mean_value_defects: dict
    l1_distances: np.ndarray


def extract_phi0(pf: PotentialField, max_start: float = 0.02, floor: float = NEG_INF_FLOOR,
                 radii_cells=(4, 2, 1)) -> Phi0Report:
    """Estimate ``φ₀ = lim_{t↓0} φ(t)`` nodewise.

    Below the first snapshot ``t₁`` each monotone piece is continued by fitting
    ``log u = a + b log t`` through the two smallest snapshots (``b`` clipped to
    ``[-1, 1]``), which gives ``∫_0^{t₁} log u = t₁ (log u₁ − b)``.  The
    correction is booked on ``φ̌`` where ``u₁ ≤ 1`` and on ``φ̂`` otherwise.
    """
    t1 = float(pf.times[0])
    if t1 > max_start:
        raise ValueError(f"trajectory starts at t = {t1}, too late to extract the initial trace")
    if t1 > 0:
        if len(pf.times) < 2:
            raise ValueError("need two snapshots to extrapolate")
        t2 = float(pf.times[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            l1, l2 = np.log(pf.u[0]), np.log(pf.u[1])
            b = np.clip((l2 - l1) / math.log(t2 / t1), -1.0, 1.0)
        corr = t1 * (l1 - b)
        lo0 = pf.lo[0] - np.where(pf.u[0] <= 1.0, corr, 0.0)
        hi0 = pf.hi[0] - np.where(pf.u[0] > 1.0, corr, 0.0)
    else:
        lo0, hi0 = pf.lo[0], pf.hi[0]
    phi0 = pf.phi_tau + lo0 + hi0
    neg = ~(phi0 > floor) & np.isfinite(pf.phi_tau)
    phi0 = np.where(neg, floor, phi0)
    pf.phi0 = phi0
    return Phi0Report(phi0, neg, mean_value_defects(pf, radii_cells), l1_distances(pf))


def mean_value_defects(pf: PotentialField, radii_cells=(4, 2, 1)) -> dict:
    """sup over finite interior nodes of ``|φ₀(x) − avg_{B_r(x)} φ₀|`` for each radius."""
    out = {}
    phi0 = pf.phi0
    if pf.sphere:
        g = pf.grid
        n = g.unit_vectors.reshape(-1, 3)
        W = g.weights.ravel()
        f = phi0.ravel()
        spacing = math.pi / (g.L + 1)
        from scipy.spatial import cKDTree

        tree = cKDTree(n)
        for c in radii_cells:
            r = c * spacing
            nb = tree.query_ball_point(n, 2 * math.sin(r / 2))
            avg = np.array([np.sum(W[j] * f[j]) / np.sum(W[j]) for j in nb])
            out[float(r)] = float(np.max(np.abs(avg - f)))
        return out
    g = pf.grid
    m = pf.interior() & (phi0 > NEG_INF_FLOOR)
    for c in radii_cells:
        offs = [(i, j) for i in range(-c, c + 1) for j in range(-c, c + 1) if i * i + j * j <= c * c]
        acc = np.zeros_like(phi0)
        for i, j in offs:
            acc += np.roll(np.roll(phi0, i, 0), j, 1)
        avg = acc / len(offs)
        inner = m & (g.r < g.R - g.collar_width - (c + 1) * g.dx)
        out[float(c * g.dx)] = float(np.max(np.abs(avg - phi0)[inner])) if inner.any() else 0.0
    return out


def l1_distances(pf: PotentialField) -> np.ndarray:
    """Discrete L¹ distance between ``φ(t_k)`` and ``φ₀`` on interior nodes."""
    m = pf.interior()
    if pf.sphere:
        return np.array([pf.grid.integrate(np.abs(p - pf.phi0)) for p in pf.phi])
    return np.array([float(np.sum(np.abs(p - pf.phi0)[m]) * pf.grid.cell_area) for p in pf.phi])


def weak_laplacian_pairing(pf: PotentialField, psi) -> float:
    """``∫ ψ Δ_h φ₀`` on the chart, with ``ψ`` supported inside the interior."""
    g = pf.grid
    lap = g.laplacian(pf.phi0)
    m = pf.interior()
    vals = psi(g.points)
    if np.any(np.abs(vals[g.inside & ~m]) > 0):
        raise ValueError("test function must vanish off the interior nodes")
    return float(np.sum((vals * lap)[m]) * g.cell_area)


def usc_defect(pf: PotentialField, node: tuple, radii) -> float:
    """``max φ(x_n, t_n) − φ₀(x)`` over nodes ``x_n`` within ``radii[n]`` and ``t_n`` the ``n``-th snapshot."""
    g = pf.grid
    x = g.points[node]
    worst = -np.inf
    for k, r in enumerate(radii):
        if k >= len(pf.phi):
            break
        m = (np.hypot(g.X - x[0], g.Y - x[1]) <= r) & pf.interior()
        worst = max(worst, float(np.max(pf.phi[k][m]) - pf.phi0[node]))
    return worst


# ---------------------------------------------------------------------------
# barriers on balls


def F(t, R: float):
    """``t (1 − log(8t/R²))``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * (1.0 - np.log(8.0 * t / (R * R))), 0.0)


@dataclass(frozen=True)
class BarrierParams:
    R: float
    delta: float

    @property
    def F(self) -> float:
        return float(F(self.delta, self.R))


def modified_potential(pf: PotentialField, delta: float, R: float | None = None) -> PotentialField:
    """``φ_{R,δ}(t) = φ_R(t + δ) + F(δ) + δ(1 + t)`` on the shifted times ``t = t_k − δ ≥ 0``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    R = pf.grid.R if R is None else R
    keep = [k for k, t in enumerate(pf.times) if t >= delta * (1 - 1e-12)]
    if not keep or not math.isclose(pf.times[keep[0]], delta, rel_tol=1e-9):
        raise ValueError("potential has no snapshot at t = delta")
    Fd = float(F(delta, R))
    ts = np.array([pf.times[k] - delta for k in keep])
    phi = [pf.phi[k] + Fd + delta * (1 + t) for k, t in zip(keep, ts)]
    return PotentialField(pf.grid, ts, phi, pf.tau - delta, pf.phi_tau + Fd + delta * (1 + pf.tau - delta),
                          [pf.lo[k] for k in keep], [pf.hi[k] for k in keep], [pf.u[k] for k in keep],
                          pf.phi0, pf.shift)


def initial_control_margin(pf_rd: PotentialField, delta: float) -> float:
    """``min (φ_{R,δ}(0) − φ₀ − δ)`` over finite interior nodes (should be ``≥ 0``)."""
    m = pf_rd.interior() & (pf_rd.phi0 > NEG_INF_FLOOR)
    return float(np.min((pf_rd.phi[0] - pf_rd.phi0 - delta)[m]))


@dataclass
class BarrierReport:
    C1: float
    finite: bool
    margin_profile: list  # (radius, min margin) near the boundary

    @property
    def ok(self) -> bool:
        return self.finite


def check_barrier_separation(pf_rd: PotentialField, psi: PotentialField, delta: float, R: float, t1: float,
                             bins: int = 10) -> BarrierReport:
    """Smallest ``C₁`` with ``φ_{R,δ}(t) − ψ(t) ≥ (δ/2) log h_R − C₁`` on ``[0, t₁]``."""
    g = pf_rd.grid
    m = pf_rd.interior()
    logh = np.full(g.r.shape, np.nan)
    logh[g.inside] = np.log(radial_hyperbolic_factor(R, g.r[g.inside]))
    C1 = -np.inf
    margin = np.full(g.r.shape, np.inf)
    for k, t in enumerate(pf_rd.times):
        if t > t1 * (1 + 1e-12):
            break
        try:
            other = psi.at(t)
        except KeyError:
            continue
        gap = pf_rd.phi[k] - other - 0.5 * delta * logh
        C1 = max(C1, float(np.max(-gap[m])))
        margin = np.minimum(margin, np.where(m, gap, np.inf))
    finite = bool(np.isfinite(C1))
    edges = np.linspace(0.5 * R, R - g.collar_width, bins + 1)
    prof = []
    for a, b in zip(edges[:-1], edges[1:]):
        ring = m & (g.r >= a) & (g.r < b)
        if ring.any():
            prof.append((0.5 * (a + b), float(np.min(margin[ring] + C1))))
    return BarrierReport(C1, finite, prof)


# ---------------------------------------------------------------------------
# sphere


@dataclass
class SpherePotential:
    pf: PotentialField
    s: np.ndarray  # rescaled times
    psi: list
    elliptic: np.ndarray
    evolution: np.ndarray
    psi_residual: np.ndarray
    negative: bool
    exp_integrals: dict = field(default_factory=dict)


def sphere_potential(traj: Trajectory, tau: float | None = None, margin: float = 0.1, p: float = 2.0,
                     mass_tol: float = 1e-6) -> SpherePotential:
    """Potential flow on the sphere normalized to initial mass ``4π`` and time origin 0.

    ``φ`` is shifted so that ``max φ₀ = −margin``; the rescaled flow is
    ``ψ(s) = e^s φ((1 − e^{−s})/2)``, sampled at ``s_k = −log(1 − 2 t_k)``.
    """
    if not isinstance(traj.grid, SphereGrid):
        raise TypeError("sphere trajectory required")
    g = traj.grid
    A = traj.area()
    expected = 4 * np.pi - 8 * np.pi * traj.times
    if abs(A[0] - expected[0]) > mass_tol * 4 * np.pi:
        raise ValueError(f"sphere flow not normalized: area {A[0]:.6g} at t = {traj.times[0]:.3g}, expected {expected[0]:.6g}")
    if tau is None:
        tau = float(traj.times[np.argmin(np.abs(traj.times - 0.25))])
    pf = build_potential(traj, tau)
    extract_phi0(pf, max_start=0.02)
    pf = pf.shifted(-(float(np.max(pf.phi0)) + margin))
    ell = elliptic_residual_sphere(pf)
    evo = evolution_residual(pf, sphere_offset=lambda t: 1 - 2 * t)
    s = -np.log(1 - 2 * pf.times)
    psi = [math.exp(sk) * ph for sk, ph in zip(s, pf.phi)]
    psi_res = psi_residual(g, s, psi)
    negative = all(float(np.max(ph)) < 0 for ph in pf.phi)
    ints = {float(t): g.integrate(np.exp(p * np.abs(ph))) for t, ph in zip(pf.times, pf.phi)}
    return SpherePotential(pf, s, psi, ell, evo, psi_res, negative, ints)


def elliptic_residual_sphere(pf: PotentialField) -> np.ndarray:
    """sup ``|Δ₀φ − (u − (1 − 2t))|`` per snapshot."""
    return np.array([
        float(np.max(np.abs(pf.grid.laplacian(ph) - (u - (1 - 2 * t)))))
        for t, ph, u in zip(pf.times, pf.phi, pf.u)
    ])


def psi_residual(grid: SphereGrid, s: np.ndarray, psi: list) -> np.ndarray:
    """sup ``|∂_sψ − ψ + s/2 − ½ log(Δ₀ψ + 1)|`` with the backward difference at ``s_k``.

    The backward-difference error is first order in the step of ``s``.
    """
    out = []
    for k in range(1, len(psi)):
        ds = s[k] - s[k - 1]
        dpsi = (psi[k] - psi[k - 1]) / ds
        with np.errstate(invalid="ignore", divide="ignore"):
            rhs = psi[k] - s[k] / 2 + 0.5 * np.log(grid.laplacian(psi[k]) + 1)
        out.append(float(np.max(np.abs(dpsi - rhs))))
    return np.array(out)


@dataclass
class DeeperReport:
    eps: list
    violations: dict  # eps -> max over t, nodes of Φ_ε(t) − φ(ε + t)
    alpha_times: np.ndarray
    alpha: np.ndarray
    alpha_monotone: bool
    phi_eps_distance: dict  # eps -> sup |φ(ε) − φ₀|
    kw_residuals: dict

    @property
    def ok(self) -> bool:
        return all(v <= 0 for v in self.violations.values()) and self.alpha_monotone


def check_deeper_bound(sp: SpherePotential | PotentialField, eps_list, t_max: float = 0.24,
                       alpha_t_max: float = 0.1, tol: float = 1e-9) -> DeeperReport:
    """Compare ``Φ_ε(t) = (1 − 4t) φ(ε) + t w_ε + t log t − t`` with ``φ(ε + t)``.

    ``w_ε`` solves ``Δ₀ w = e^{w − 4φ(ε)} − 1``.  Also reports
    ``α(t) = max(0, max_x((1 − 4t) φ₀ − φ(t)))``.
    """
    from .semilinear import kazdan_warner_solve

    pf = sp.pf if isinstance(sp, SpherePotential) else sp
    g = pf.grid
    viol, dist, kwres = {}, {}, {}
    for eps in eps_list:
        ke = pf.index(eps)
        phi_e = pf.phi[ke]
        sol = kazdan_warner_solve(4.0 * phi_e, g)
        w = sol.w
        kwres[eps] = sol.residual
        worst = -np.inf
        for k in range(ke + 1, len(pf.times)):
            t = pf.times[k] - eps
            if t > min(t_max, 0.25 - eps):
                break
            Phi = (1 - 4 * t) * phi_e + t * w + (t * math.log(t) - t)
            worst = max(worst, float(np.max(Phi - pf.phi[k])))
        viol[eps] = worst
        dist[eps] = float(np.max(np.abs(phi_e - pf.phi0)))
    ts, al = [], []
    for t, ph in zip(pf.times, pf.phi):
        if 0 < t <= alpha_t_max:
            ts.append(t)
            al.append(max(0.0, float(np.max((1 - 4 * t) * pf.phi0 - ph))))
    ts, al = np.array(ts), np.array(al)
    mono = bool(np.all(np.diff(al) >= -tol))
    return DeeperReport(list(eps_list), viol, ts, al, mono, dist, kwres)
