"""Global approximation: cube analysis, interface linearization, split
projection, deformation and the convergence driver (n = 2).

At scale ``delta`` the plane is covered by cubes ``Q_z = gamma + z + (-delta/2,
delta/2)^2``.  In every interior cube crossed by an interface the dominant
interface is fitted by a graph ``phi_z`` over its total-least-squares line and
replaced by the piecewise-linear interpolant ``psi_z + beta``.  The
approximant projects the two one-sided extensions on either side of that
polyline and the plain projection elsewhere.  A deformation moving the
fitted graphs onto the polylines compares the jump sets.

Per-cube data are kept in arrays (``CubeTable``) so that fields with many
interfaces remain tractable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import shapely
from scipy.interpolate import CubicSpline

from .boundary import LipschitzDomain, extend_field
from .energy import (
    BulkDensity,
    MetricsRecord,
    SurfaceDensity,
    faces_energy,
    faces_g0_energy,
    field_bulk_energy,
    jump_discrepancy,
    strict_metrics,
    surface_energy,
)
from .field import DegenerateSlice, Modulus, SbvField, as_polygon, curve_intervals, g0_jump_energy
from .mesh import GridPlacement, cell_vertices_int, enumerate_many, sample_shift
from .projector import (
    MAX_JITTER,
    JumpFaceInventory,
    PwAffineFunction,
    _region_box,
    project_chunked,
    refined_points,
)

SQRT2 = math.sqrt(2.0)
RAMP_KAPPA = 0.05
PHI_KNOTS = 129
MAX_ATTEMPTS = 8


class ScaleError(RuntimeError):
    """No admissible cube scale above the underflow threshold."""

    def __init__(self, msg: str, report: dict | None = None):
        super().__init__(msg)
        self.report = report or {}


class BilipschitzError(ArithmeticError):
    """Measured ``|D Phi - Id|`` above its budget: the interface scale must be reduced."""

    def __init__(self, msg: str, dphi_sup: float = math.nan):
        super().__init__(msg)
        self.dphi_sup = dphi_sup


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Knobs of the construction; defaults follow the acceptance setups."""

    psi: BulkDensity = field(default_factory=lambda: BulkDensity("power", 2.0))
    g0: Modulus = field(default_factory=lambda: Modulus("capped", 0.5))
    g: SurfaceDensity | None = None
    n_zeta: int = 8
    eps_ratio: float = 0.25
    delta_ratio: float | None = None
    residual_multiple: float = 1.0
    rho0: float = 0.1
    extension: str = "natural"
    sample_spacing: float = 1 / 16
    node_refine_max: int = 64
    metrics_refine: int = 1
    discrepancy: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.extension not in ("natural", "reflect"):
            raise ValueError(f"unknown extension mode {self.extension!r}")
        if self.n_zeta < 1:
            raise ValueError("n_zeta must be positive")
        if self.g is None:
            self.g = SurfaceDensity("g0", self.g0)

    @property
    def p(self) -> float:
        return self.psi.p if self.psi.kind == "power" else 1.0


# ---------------------------------------------------------------------------
# cube grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CubeGrid:
    """Cubes ``gamma + k delta + (-delta/2, delta/2)^2`` for ``k`` in a rectangle of indices."""

    delta: float
    gamma: np.ndarray
    lo: np.ndarray
    shape: tuple

    @classmethod
    def covering(cls, bounds, delta: float, gamma) -> "CubeGrid":
        gamma = np.asarray(gamma, dtype=float)
        b0, b1 = np.asarray(bounds[:2], float), np.asarray(bounds[2:], float)
        lo = np.floor((b0 - gamma) / delta + 0.5).astype(np.int64)
        hi = np.floor((b1 - gamma) / delta + 0.5).astype(np.int64)
        return cls(delta, gamma, lo, tuple(int(v) for v in hi - lo + 1))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def index(self, x) -> np.ndarray:
        return np.floor((np.asarray(x, float) - self.gamma) / self.delta + 0.5).astype(np.int64)

    def flat_of_index(self, idx) -> np.ndarray:
        rel = np.asarray(idx) - self.lo
        ok = (rel[:, 0] >= 0) & (rel[:, 0] < self.shape[0]) & (rel[:, 1] >= 0) & (rel[:, 1] < self.shape[1])
        return np.where(ok, rel[:, 0] * self.shape[1] + rel[:, 1], -1)

    def flat(self, x) -> np.ndarray:
        return self.flat_of_index(self.index(np.atleast_2d(x)))

    def index_of_flat(self, fl) -> np.ndarray:
        fl = np.asarray(fl)
        return np.stack([fl // self.shape[1], fl % self.shape[1]], axis=1) + self.lo

    def center(self, idx) -> np.ndarray:
        return self.gamma + np.asarray(idx, float) * self.delta

    def all_indices(self) -> np.ndarray:
        return self.index_of_flat(np.arange(self.size))


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


def _hermite(PV, PD, y0: float, hk: float, y, rows):
    """Cubic Hermite values and derivatives on the uniform knots ``y0 + i hk``."""
    K = PV.shape[1]
    s = (np.asarray(y, float) - y0) / hk
    i = np.clip(np.floor(s).astype(np.int64), 0, K - 2)
    u = s - i
    p0, p1 = PV[rows, i], PV[rows, i + 1]
    m0, m1 = PD[rows, i] * hk, PD[rows, i + 1] * hk
    u2, u3 = u * u, u * u * u
    val = (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1
    der = ((6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 + (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1) / hk
    return val, der


@dataclass(eq=False)
class CubeFrame:
    """Analysis of one cube: mean gradient, dominant interface and its fitted graph.

    ``rotation`` has columns ``(t, n)``; the graph is ``anchor + y t + phi(y) n``.
    """

    index: tuple
    delta: float
    gamma: np.ndarray
    kind: str = "interior"
    eta: np.ndarray | None = None
    interface: int | None = None
    rotation: np.ndarray | None = None
    anchor: np.ndarray | None = None
    jump: np.ndarray | None = None
    knot0: float = 0.0
    knot_h: float = 1.0
    phi_values: np.ndarray | None = None
    phi_derivs: np.ndarray | None = None
    slope: float = 0.0
    residuals: dict = field(default_factory=dict)
    delta_prime: float = math.nan

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.index, float) * self.delta

    @property
    def center(self) -> np.ndarray:
        return self.gamma + self.z

    def q_box(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.center
        return c - self.delta / 2, c + self.delta / 2

    def qstar_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.z - self.delta, self.z + self.delta

    def qprime_box(self, delta_prime: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        dp = self.delta_prime if delta_prime is None else delta_prime
        return self.center - dp / 2, self.center + dp / 2

    def qpp_box(self, delta_prime: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        dp = self.delta_prime if delta_prime is None else delta_prime
        r = (self.delta + dp) / 4
        return self.center - r, self.center + r

    @property
    def has_interface(self) -> bool:
        return self.interface is not None

    def local(self, x) -> tuple[np.ndarray, np.ndarray]:
        d = np.atleast_2d(x) - self.anchor
        return d @ self.rotation[:, 0], d @ self.rotation[:, 1]

    def world(self, y, off) -> np.ndarray:
        y = np.asarray(y, float)[:, None]
        off = np.asarray(off, float)[:, None]
        return self.anchor + y * self.rotation[:, 0] + off * self.rotation[:, 1]

    def phi(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, float))
        v, _ = _hermite(self.phi_values[None], self.phi_derivs[None], self.knot0, self.knot_h, y, np.zeros(len(y), int))
        return v

    def dphi(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, float))
        _, d = _hermite(self.phi_values[None], self.phi_derivs[None], self.knot0, self.knot_h, y, np.zeros(len(y), int))
        return d


class FrameSet(list):
    """List of ``CubeFrame`` (all cubes meeting the domain) with the shared grid and analysis report."""

    def __init__(self, frames, grid: CubeGrid, report: dict):
        super().__init__(frames)
        self.grid = grid
        self.report = report

    @property
    def delta(self) -> float:
        return self.grid.delta

    def interface_frames(self) -> list[CubeFrame]:
        return [fr for fr in self if fr.has_interface]


# ---------------------------------------------------------------------------
# interface sampling and scale analysis
# ---------------------------------------------------------------------------


def _sample_interfaces(f: SbvField, region, h: float):
    """Midpoint samples of all interfaces inside ``region``: points, arclength weights, jumps, normals, ids."""
    X, W, J, NU, IT = [], [], [], [], []
    for k, itf in enumerate(f.interfaces):
        curve = itf.curve
        for lo, hi in curve_intervals(curve, region):
            tt = np.linspace(lo, hi, 65)
            est = float(np.linalg.norm(np.diff(curve.point(tt), axis=0), axis=1).sum())
            n = max(4, int(math.ceil(est / h)))
            mid = lo + (np.arange(n) + 0.5) * (hi - lo) / n
            pts = curve.point(mid)
            X.append(pts)
            W.append(np.linalg.norm(curve.deriv(mid), axis=1) * (hi - lo) / n)
            J.append(itf.amplitude.value(pts))
            nu = curve.normal(mid)
            NU.append(nu / np.linalg.norm(nu, axis=1, keepdims=True))
            IT.append(np.full(n, k))
    if not X:
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, f.m)), np.zeros((0, 2)), np.zeros(0, int)
    return np.concatenate(X), np.concatenate(W), np.concatenate(J), np.concatenate(NU), np.concatenate(IT)


def _gauss_box_points(lo: np.ndarray, hi: np.ndarray, order: int = 6):
    x, w = np.polynomial.legendre.leggauss(order)
    X, Y = np.meshgrid(x, x, indexing="ij")
    Wt = np.outer(w, w).ravel() / 4.0
    ref = np.stack([X.ravel(), Y.ravel()], axis=1)
    c = 0.5 * (lo + hi)
    hw = 0.5 * (hi - lo)
    return c[:, None, :] + hw[:, None, :] * ref[None], Wt


def _longest_run(valid: np.ndarray) -> tuple[int, int]:
    best, start = (0, 0), None
    for i, v in enumerate(np.append(valid, False)):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def _fit_graph(yk: np.ndarray, vals: np.ndarray):
    """Spline through the longest valid run, extended linearly; values and derivatives on ``yk``."""
    a, b = _longest_run(~np.isnan(vals))
    if b - a < 4:
        return None
    sp = CubicSpline(yk[a:b], vals[a:b])
    PV = np.empty_like(yk)
    PD = np.empty_like(yk)
    PV[a:b] = vals[a:b]
    PD[a:b] = sp(yk[a:b], 1)
    if a > 0:
        PD[:a] = PD[a]
        PV[:a] = PV[a] + PD[a] * (yk[:a] - yk[a])
    if b < len(yk):
        PD[b:] = PD[b - 1]
        PV[b:] = PV[b - 1] + PD[b - 1] * (yk[b:] - yk[b - 1])
    return PV, PD, (float(yk[a]), float(yk[b - 1]))


def _group(keys: np.ndarray):
    """Sorted order and split points of equal keys."""
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    cuts = np.flatnonzero(np.diff(ks)) + 1
    starts = np.r_[0, cuts]
    return order, ks[starts] if len(ks) else ks, np.split(order, cuts) if len(ks) else []


def _is_box(poly) -> bool:
    x0, y0, x1, y1 = poly.bounds
    return abs(poly.area - (x1 - x0) * (y1 - y0)) <= 1e-12 * max(1.0, poly.area)


def _analyze_at(f: SbvField, poly, theta: float, delta: float, cfg: PipelineConfig, rng: np.random.Generator,
                mu: float, supports: Callable, reflect: bool) -> FrameSet:
    g0 = cfg.g0
    r = rng.uniform(0, delta / 4) * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    gamma = r * np.array([math.cos(a), math.sin(a)])
    X, W, J, NU, IT = _sample_interfaces(f, shapely.box(*(np.array(poly.bounds) + 2 * delta * np.array([-1, -1, 1, 1]))),
                                         cfg.sample_spacing * delta)
    for _ in range(MAX_ATTEMPTS):
        # an interface running along cube sides makes the construction degenerate
        near = np.abs(((X - gamma) / delta + 0.5) % 1.0)
        near = np.minimum(near, 1 - near) * delta
        if len(X) == 0 or np.mean(np.min(near, axis=1) < 1e-9) < 0.1:
            break
        gamma = rng.uniform(-delta / 4, delta / 4, 2) / SQRT2
    grid = CubeGrid.covering(poly.bounds, delta, gamma)
    idx = grid.all_indices()
    cen = grid.center(idx)
    boxes = shapely.box(cen[:, 0] - delta / 2, cen[:, 1] - delta / 2, cen[:, 0] + delta / 2, cen[:, 1] + delta / 2)
    cover = np.ones(len(idx), bool) if _is_box(poly) else shapely.intersects(boxes, poly)
    interior = np.ones(len(idx), bool)
    if reflect:
        dist = shapely.distance(poly.boundary, shapely.points(cen))
        interior = shapely.contains_xy(poly, cen[:, 0], cen[:, 1]) & (dist > delta * SQRT2)
    # mean gradients over Q*
    zc = idx * delta
    pts, wq = _gauss_box_points(zc - delta, zc + delta)
    Gq = f.grad(pts.reshape(-1, 2)).reshape(len(idx), len(wq), f.m, 2)
    eta = np.einsum("q,cqmd->cmd", wq, Gq)
    dev = np.sqrt(((Gq - eta[:, None]) ** 2).sum(axis=(2, 3))) ** cfg.p
    grad_res = (4 * delta * delta) * (dev * wq).sum(axis=1)
    # samples -> cubes whose Q* contains them
    nI = max(1, len(f.interfaces))
    base = np.floor(X / delta).astype(np.int64)
    S, C = [], []
    for ox in (0, 1):
        for oy in (0, 1):
            fl = grid.flat_of_index(base + np.array([ox, oy]))
            ok = fl >= 0
            S.append(np.flatnonzero(ok))
            C.append(fl[ok])
    S, C = np.concatenate(S), np.concatenate(C)
    keep = cover[C] & interior[C]
    S, C = S[keep], C[keep]
    gm = g0(np.linalg.norm(J, axis=1)) * W
    # dominant interface per cube by g0 mass
    key = C * nI + IT[S]
    uk, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv, weights=gm[S])
    kc, ki = uk // nI, uk % nI
    order = np.lexsort((-mass, kc))
    first = np.r_[True, kc[order][1:] != kc[order][:-1]] if len(kc) else np.zeros(0, bool)
    dom = dict(zip(kc[order][first].tolist(), ki[order][first].tolist()))
    # group pairs by cube
    res = {k: np.zeros(len(idx)) for k in ("off", "amp", "normal")}
    frames_data: dict[int, dict] = {}
    order_p = np.argsort(C, kind="stable")
    Cs = C[order_p]
    cuts = np.flatnonzero(np.diff(Cs)) + 1
    groups = np.split(order_p, cuts) if len(Cs) else []
    fit_todo: dict[int, list] = {}
    for g in groups:
        c = int(C[g[0]])
        s = S[g]
        k = dom[c]
        d_mask = IT[s] == k
        res["off"][c] += gm[s[~d_mask]].sum()
        sd = s[d_mask]
        if len(sd) < 3 or not supports(k):
            res["off"][c] += gm[sd].sum()
            continue
        w = W[sd]
        x0 = (w[:, None] * X[sd]).sum(0) / w.sum()
        dx = X[sd] - x0
        cov = np.einsum("k,ki,kj->ij", w, dx, dx)
        ang = 0.5 * math.atan2(2 * cov[0, 1], cov[0, 0] - cov[1, 1])
        t = np.array([math.cos(ang), math.sin(ang)])
        nrm = np.array([-t[1], t[0]])
        if (w * (NU[sd] @ nrm)).sum() < 0:
            t, nrm = -t, -nrm
        frames_data[c] = {"k": k, "anchor": x0, "t": t, "n": nrm, "samples": sd}
        fit_todo.setdefault(k, []).append(c)
    # graph fits, grouped by interface
    Y = 2 * SQRT2 * delta * 1.02
    yk = np.linspace(-Y, Y, PHI_KNOTS)
    hk = float(yk[1] - yk[0])
    for k, cubes in fit_todo.items():
        curve = f.interfaces[k].curve
        A0 = np.array([frames_data[c]["anchor"] for c in cubes])
        T0 = np.array([frames_data[c]["t"] for c in cubes])
        N0 = np.array([frames_data[c]["n"] for c in cubes])
        vals = None
        for attempt in range(3):
            yy = yk + attempt * 1e-7 * delta
            base_pts = A0[:, None, :] + yy[None, :, None] * T0[:, None, :]
            a_ = (base_pts - Y * N0[:, None, :]).reshape(-1, 2)
            b_ = (base_pts + Y * N0[:, None, :]).reshape(-1, 2)
            try:
                seg, tp, _ = curve.crossings(a_, b_)
            except DegenerateSlice:
                continue
            off = -Y + 2 * Y * tp
            vals = np.full(len(a_), np.nan)
            if len(seg):
                o = np.lexsort((np.abs(off), seg))
                fs = np.r_[True, seg[o][1:] != seg[o][:-1]]
                vals[seg[o][fs]] = off[o][fs]
            vals = vals.reshape(len(cubes), PHI_KNOTS)
            break
        for i, c in enumerate(cubes):
            fd = frames_data[c]
            fit = None if vals is None else _fit_graph(yk, vals[i])
            if fit is None:
                res["off"][c] += gm[fd["samples"]].sum()
                del frames_data[c]
                continue
            PV, PD, yr = fit
            sd = fd["samples"]
            dx = X[sd] - fd["anchor"]
            ys, os_ = dx @ fd["t"], dx @ fd["n"]
            pv, _ = _hermite(PV[None], PD[None], -Y, hk, ys, np.zeros(len(ys), int))
            on = (np.abs(os_ - pv) <= 1e-6 * delta) & (ys >= yr[0]) & (ys <= yr[1])
            res["off"][c] += gm[sd[~on]].sum()
            so = sd[on]
            sg = np.sign(NU[so] @ fd["n"])
            sg[sg == 0] = 1.0
            ww = W[so]
            sj = sg[:, None] * J[so]
            s_z = (ww[:, None] * sj).sum(0) / max(ww.sum(), 1e-300)
            res["amp"][c] += (g0(np.linalg.norm(sj - s_z, axis=1)) * ww).sum()
            res["normal"][c] += (gm[so] * np.linalg.norm(sg[:, None] * NU[so] - fd["n"], axis=1)).sum()
            # slope of the graph where it lies inside Q_z
            qlo, qhi = cen[c] - delta / 2, cen[c] + delta / 2
            gp = fd["anchor"] + yk[:, None] * fd["t"] + PV[:, None] * fd["n"]
            inq = np.all((gp >= qlo) & (gp <= qhi), axis=1) & (yk >= yr[0]) & (yk <= yr[1])
            fd.update(PV=PV, PD=PD, jump=s_z, slope=float(np.max(np.abs(PD[inq]))) if np.any(inq) else 0.0)
    # frames
    frames = []
    cov_idx = np.flatnonzero(cover)
    for c in cov_idx:
        fr = CubeFrame(tuple(int(v) for v in idx[c]), delta, gamma, "interior" if interior[c] else "boundary",
                       eta[c], residuals={"grad": float(grad_res[c]), "off": float(res["off"][c]),
                                          "amp": float(res["amp"][c]), "normal": float(res["normal"][c])})
        fd = frames_data.get(int(c))
        if fd is not None and "PV" in fd:
            fr.interface = fd["k"]
            fr.rotation = np.stack([fd["t"], fd["n"]], axis=1)
            fr.anchor = fd["anchor"]
            fr.jump = fd["jump"]
            fr.knot0, fr.knot_h = -Y, hk
            fr.phi_values, fr.phi_derivs = fd["PV"], fd["PD"]
            fr.slope = fd["slope"]
        frames.append(fr)
    inner = cover & interior
    sums = {
        "grad": float(grad_res[inner].sum()),
        "off": float(res["off"].sum()),
        "amp": float(res["amp"].sum()),
        "normal": float(res["normal"].sum()),
    }
    budget = cfg.residual_multiple * theta * (1 + mu + poly.area)
    slope = max((fr.slope for fr in frames if fr.has_interface), default=0.0)
    bmask = cover & ~interior
    in_b = np.zeros(len(X), bool)
    if np.any(bmask) and len(X):
        fl = grid.flat(X)
        in_b = (fl >= 0) & bmask[np.maximum(fl, 0)]
    report = {
        "delta": delta,
        "gamma": gamma.tolist(),
        "residuals": sums,
        "budget": budget,
        "max_slope": slope,
        "accepted": all(v <= budget for v in sums.values()) and slope <= theta,
        "interface_cubes": sum(fr.has_interface for fr in frames),
        "boundary_cubes": int(bmask.sum()),
        "boundary_layer_mass": float(gm[in_b].sum() + delta * delta * bmask.sum()),
    }
    return FrameSet(frames, grid, report)


def _supports_factory(f: SbvField, resolver: Callable | None) -> Callable:
    cache: dict[int, bool] = {}

    def supports(k: int) -> bool:
        if k not in cache:
            try:
                (resolver or f.one_sided)(k, 1)
                cache[k] = True
            except (NotImplementedError, KeyError, IndexError):
                cache[k] = False
        return cache[k]

    return supports


def analyze_scale(f: SbvField, region, theta: float, config: PipelineConfig | None = None,
                  rng: np.random.Generator | None = None, delta: float | None = None, mu: float | None = None,
                  resolver: Callable | None = None) -> tuple[float, FrameSet]:
    """Cube scale and per-cube frames; ``delta`` halves from ``theta`` until the residuals pass.

    With an explicit ``delta`` (or ``config.delta_ratio``) the residuals are
    computed and reported but not enforced.
    """
    if not 0 < theta <= 0.5:
        raise ValueError("theta must lie in (0, 1/2]")
    cfg = config or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    poly = as_polygon(region)
    if mu is None:
        mu = g0_jump_energy(f, cfg.g0, poly) if f.interfaces else 0.0
    supports = _supports_factory(f, resolver)
    reflect = cfg.extension == "reflect"
    if delta is None and cfg.delta_ratio is not None:
        delta = cfg.delta_ratio * theta
    if delta is not None:
        fs = _analyze_at(f, poly, theta, float(delta), cfg, rng, mu, supports, reflect)
        return fs.delta, fs
    x0, y0, x1, y1 = poly.bounds
    diam = math.hypot(x1 - x0, y1 - y0)
    d = theta
    history = []
    while d >= 1e-4 * diam:
        fs = _analyze_at(f, poly, theta, d, cfg, rng, mu, supports, reflect)
        history.append(fs.report)
        if fs.report["accepted"]:
            fs.report["history"] = history
            return d, fs
        d /= 2
    raise ScaleError(f"no admissible cube scale for theta={theta}", {"history": history})


# ---------------------------------------------------------------------------
# interface linearization
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class InterfacePL:
    """Piecewise-linear interpolant ``psi`` of ``phi`` on the nodes ``h Z`` plus the shift ``beta``."""

    frame: CubeFrame
    eps: float
    h: float
    node0: int
    values: np.ndarray
    beta: float
    sup_err: float
    dsup_err: float

    @property
    def omega(self) -> float:
        return max(self.sup_err / self.eps, self.dsup_err)

    @property
    def nodes(self) -> np.ndarray:
        return (self.node0 + np.arange(len(self.values))) * self.h

    def psi(self, y) -> np.ndarray:
        return np.interp(np.asarray(y, float), self.nodes, self.values)

    def dpsi(self, y) -> np.ndarray:
        s = np.clip(np.floor(np.asarray(y, float) / self.h).astype(np.int64) - self.node0, 0, len(self.values) - 2)
        return (self.values[s + 1] - self.values[s]) / self.h

    @property
    def vertices(self) -> np.ndarray:
        return self.frame.world(self.nodes, self.values + self.beta)

    def side(self, x) -> np.ndarray:
        y, off = self.frame.local(x)
        return off - self.psi(y) - self.beta

    def half_plane(self, sign: int):
        """Polygon ``H^+`` (sign > 0) or ``H^-`` restricted to the cube ``Q_z``."""
        v = self.vertices
        nrm = self.frame.rotation[:, 1] * 4 * self.frame.delta * sign
        ring = np.vstack([v, v[-1] + nrm, v[0] + nrm])
        lo, hi = self.frame.q_box()
        return shapely.intersection(shapely.Polygon(ring).buffer(0), shapely.box(*lo, *hi))

    def piece_in_cube(self):
        lo, hi = self.frame.q_box()
        return shapely.intersection(shapely.LineString(self.vertices), shapely.box(*lo, *hi))


def _q_yrange(frame: CubeFrame) -> tuple[float, float]:
    lo, hi = frame.q_box()
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    y, _ = frame.local(corners)
    return float(y.min()), float(y.max())


def linearize_interface(frame: CubeFrame, eps: float, rng: np.random.Generator, node_spacing: float | None = None,
                        beta_cap: float | None = None) -> InterfacePL:
    """Interpolate ``phi`` at the nodes and draw the shift ``beta``; interpolation errors are measured."""
    if not frame.has_interface:
        raise ValueError("frame has no interface")
    h = eps if node_spacing is None else node_spacing
    ymin, ymax = _q_yrange(frame)
    i0 = int(math.floor(ymin / h)) - 1
    i1 = int(math.ceil(ymax / h)) + 1
    nodes = np.arange(i0, i1 + 1) * h
    vals = frame.phi(nodes)
    yy = np.linspace(ymin, ymax, 8 * (i1 - i0) + 1)
    pl = InterfacePL(frame, eps, h, i0, vals, 0.0, 0.0, 0.0)
    pl.sup_err = float(np.max(np.abs(frame.phi(yy) - pl.psi(yy))))
    mids = (np.arange(i0, i1) + 0.5) * h
    # derivative error: sample inside each node interval (psi' is constant there)
    ts = (np.arange(i0, i1)[:, None] + np.linspace(0.02, 0.98, 9)[None]) * h
    keep = (ts >= ymin) & (ts <= ymax)
    dp = np.repeat(pl.dpsi(mids)[:, None], ts.shape[1], axis=1)
    pl.dsup_err = float(np.max(np.abs(frame.dphi(ts[keep]) - dp[keep]))) if np.any(keep) else 0.0
    b = eps if beta_cap is None else min(eps, beta_cap)
    lo, hi = frame.q_box()
    for _ in range(MAX_ATTEMPTS):
        pl.beta = float(rng.uniform(-b, b))
        v = pl.vertices
        gap = np.min(np.minimum(np.abs(v - lo), np.abs(v - hi)))
        if gap > 1e-9:
            break
    return pl


# ---------------------------------------------------------------------------
# vectorised cube table
# ---------------------------------------------------------------------------


def _ramp(s):
    """C^1 ramp from 0 to 1 on [0, 1] with linear middle part (slope 1/(1 - kappa))."""
    k = RAMP_KAPPA
    V = 1.0 / (1.0 - k)
    s = np.clip(s, 0.0, 1.0)
    val = np.where(s < k, V * s * s / (2 * k), np.where(s > 1 - k, 1 - V * (1 - s) ** 2 / (2 * k), V * k / 2 + V * (s - k)))
    der = np.where(s < k, V * s / k, np.where(s > 1 - k, V * (1 - s) / k, V))
    return val, der


@dataclass(eq=False)
class CubeTable:
    """Arrays over the interior cubes that carry a linearized interface."""

    grid: CubeGrid
    frames: list
    interfaces: list
    delta_prime: float
    lookup: np.ndarray = None

    def __post_init__(self):
        fr = self.frames
        self.C = len(fr)
        self.lookup = np.full(self.grid.size, -1, dtype=np.int64)
        if self.C == 0:
            return
        idx = np.array([f.index for f in fr])
        self.flat = self.grid.flat_of_index(idx)
        self.lookup[self.flat] = np.arange(self.C)
        self.dom = np.array([f.interface for f in fr])
        self.qc = np.array([f.center for f in fr])
        self.anchor = np.array([f.anchor for f in fr])
        self.tan = np.array([f.rotation[:, 0] for f in fr])
        self.nrm = np.array([f.rotation[:, 1] for f in fr])
        self.knot0, self.knot_h = fr[0].knot0, fr[0].knot_h
        self.PV = np.array([f.phi_values for f in fr])
        self.PD = np.array([f.phi_derivs for f in fr])
        pls = self.interfaces
        self.h = np.array([p.h for p in pls])
        self.node0 = np.array([p.node0 for p in pls])
        self.nn = np.array([len(p.values) for p in pls])
        M = int(self.nn.max())
        SV = np.empty((self.C, M))
        for i, p in enumerate(pls):
            SV[i, : len(p.values)] = p.values
            SV[i, len(p.values):] = p.values[-1]
        self.SV = SV
        self.beta = np.array([p.beta for p in pls])
        d = self.grid.delta
        self.a = (d + self.delta_prime) / 4
        self.b = d / 2

    def __len__(self) -> int:
        return self.C

    def cube_of(self, x) -> np.ndarray:
        fl = self.grid.flat(x)
        return np.where(fl >= 0, self.lookup[np.maximum(fl, 0)], -1)

    def local(self, x, c):
        d = x - self.anchor[c]
        return np.einsum("kd,kd->k", d, self.tan[c]), np.einsum("kd,kd->k", d, self.nrm[c])

    def phi(self, y, c):
        return _hermite(self.PV, self.PD, self.knot0, self.knot_h, y, c)

    def psi(self, y, c):
        s = y / self.h[c] - self.node0[c]
        i = np.clip(np.floor(s).astype(np.int64), 0, self.nn[c] - 2)
        fr = s - i
        v0, v1 = self.SV[c, i], self.SV[c, i + 1]
        return v0 + fr * (v1 - v0), (v1 - v0) / self.h[c]

    def side(self, x, c) -> np.ndarray:
        y, off = self.local(x, c)
        return off - self.psi(y, c)[0] - self.beta[c]

    def alpha(self, x, c):
        u = x - self.qc[c]
        w = self.b - self.a
        r1, d1 = _ramp((np.abs(u) - self.a) / w)
        val = 1 - r1
        dval = -d1 / w * np.sign(u)
        return val[:, 0] * val[:, 1], np.stack([dval[:, 0] * val[:, 1], val[:, 0] * dval[:, 1]], axis=1)

    def gap(self, y, c):
        """``psi + beta - phi`` and its derivative."""
        pv, pd = self.phi(y, c)
        sv, sd = self.psi(y, c)
        return sv + self.beta[c] - pv, sd - pd

    def displacement(self, x, c):
        y, _ = self.local(x, c)
        al, _ = self.alpha(x, c)
        g, _ = self.gap(y, c)
        return (al * g)[:, None] * self.nrm[c]

    def displacement_jacobian(self, x, c):
        y, _ = self.local(x, c)
        al, dal = self.alpha(x, c)
        g, dg = self.gap(y, c)
        grad = g[:, None] * dal + (al * dg)[:, None] * self.tan[c]
        return self.nrm[c][:, :, None] * grad[:, None, :]


# ---------------------------------------------------------------------------
# deformation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Deformation:
    """``Phi(x) = x + alpha_z(x) (psi_z + beta - phi_z)(y) n_z`` in the interface cubes, identity elsewhere."""

    table: CubeTable
    theta: float
    phi_sup: float = math.nan
    dphi_sup: float = math.nan
    transport_residual: float = math.nan

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = x.copy()
        if len(self.table) == 0 or len(x) == 0:
            return out
        c = self.table.cube_of(x)
        m = c >= 0
        if np.any(m):
            out[m] += self.table.displacement(x[m], c[m])
        return out

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = np.repeat(np.eye(2)[None], len(x), axis=0)
        if len(self.table) == 0:
            return out
        c = self.table.cube_of(x)
        m = c >= 0
        if np.any(m):
            out[m] += self.table.displacement_jacobian(x[m], c[m])
        return out

    def inverse(self, y, tol: float = 1e-15, iters: int = 60) -> np.ndarray:
        """Fixed-point iteration ``x <- y - d(x)``; ``d`` is a contraction since ``|Dd| <= theta/2``."""
        y = np.atleast_2d(np.asarray(y, float))
        x = y.copy()
        if len(self.table) == 0 or len(y) == 0:
            return x
        c0 = self.table.cube_of(y)
        act = np.flatnonzero(c0 >= 0)
        for _ in range(iters):
            if len(act) == 0:
                break
            xa = x[act]
            c = self.table.cube_of(xa)
            d = np.zeros_like(xa)
            m = c >= 0
            if np.any(m):
                d[m] = self.table.displacement(xa[m], c[m])
            new = y[act] - d
            ch = np.abs(new - xa).max(axis=1)
            x[act] = new
            act = act[ch > tol * np.maximum(1.0, np.abs(new).max(axis=1))]
        return x

    # -- diagnostics -------------------------------------------------------

    def _ring_points(self, per_cube: int = 16, scan: int = 400) -> np.ndarray:
        """Points of the fitted graphs inside the transition rings, where ``|D Phi - Id|`` peaks."""
        T = self.table
        C = len(T)
        if C == 0:
            return np.zeros((0, 2))
        d = T.grid.delta
        ys = np.linspace(-d, d, scan)
        Y = np.broadcast_to(ys, (C, scan))
        cc = np.repeat(np.arange(C), scan)
        pv, _ = T.phi(Y.ravel(), cc)
        P = T.anchor[cc] + Y.ravel()[:, None] * T.tan[cc] + pv[:, None] * T.nrm[cc]
        mx = np.abs(P - T.qc[cc]).max(axis=1).reshape(C, scan)
        inring = (mx > T.a) & (mx < T.b)
        out = [P.reshape(C, scan, 2)[inring]]
        # refine between consecutive scan points that bracket the ring
        br = ((mx[:, :-1] - T.a) * (mx[:, 1:] - T.a) <= 0) | ((mx[:, :-1] - T.b) * (mx[:, 1:] - T.b) <= 0)
        ci, si = np.nonzero(br)
        if len(ci):
            fr = np.linspace(0, 1, per_cube)
            yy = (ys[si][:, None] + fr[None] * (ys[1] - ys[0])).ravel()
            c2 = np.repeat(ci, per_cube)
            pv2, _ = T.phi(yy, c2)
            out.append(T.anchor[c2] + yy[:, None] * T.tan[c2] + pv2[:, None] * T.nrm[c2])
        return np.concatenate(out)

    def measure(self, rng: np.random.Generator, per_cube: int = 32) -> tuple[float, float]:
        T = self.table
        if len(T) == 0:
            self.phi_sup = self.dphi_sup = self.transport_residual = 0.0
            return 0.0, 0.0
        d = T.grid.delta
        rnd = T.qc[:, None, :] + rng.uniform(-d / 2, d / 2, (len(T), per_cube, 2))
        pts = np.vstack([rnd.reshape(-1, 2), self._ring_points()])
        J = self.jacobian(pts) - np.eye(2)
        self.dphi_sup = float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))
        # the displacement is largest on the graphs themselves
        ys = np.linspace(-d, d, 200)
        cc = np.repeat(np.arange(len(T)), len(ys))
        yy = np.tile(ys, len(T))
        pv, _ = T.phi(yy, cc)
        P = T.anchor[cc] + yy[:, None] * T.tan[cc] + pv[:, None] * T.nrm[cc]
        disp = np.linalg.norm(self(P) - P, axis=1)
        self.phi_sup = float(max(np.max(disp), np.max(np.linalg.norm(self(pts) - pts, axis=1))))
        self.transport_residual = self.transport_check(rng)
        return self.phi_sup, self.dphi_sup

    def transport_check(self, rng: np.random.Generator, samples: int = 100) -> float:
        """Max over samples on ``L_z cap Q'_z`` of the offset of ``Phi(x)`` from ``H_z``."""
        T = self.table
        if len(T) == 0:
            return 0.0
        d = T.grid.delta
        c = rng.integers(0, len(T), samples * 20)
        y = rng.uniform(-d, d, len(c))
        pv, _ = T.phi(y, c)
        P = T.anchor[c] + y[:, None] * T.tan[c] + pv[:, None] * T.nrm[c]
        inner = np.all(np.abs(P - T.qc[c]) < T.delta_prime / 2, axis=1) & (T.cube_of(P) == c)
        c, y, P = c[inner][:samples], y[inner][:samples], P[inner][:samples]
        if len(c) == 0:
            return 0.0
        Q = self(P)
        yq, off = T.local(Q, c)
        sv, _ = T.psi(y, c)
        return float(max(np.max(np.abs(off - sv - T.beta[c])), np.max(np.abs(yq - y))))

    def bilipschitz_ratios(self, rng: np.random.Generator, pairs: int = 2000) -> np.ndarray:
        T = self.table
        if len(T) == 0:
            return np.ones(pairs)
        d = T.grid.delta
        c = rng.integers(0, len(T), pairs)
        x = T.qc[c] + rng.uniform(-d / 2, d / 2, (pairs, 2))
        y = x + rng.normal(size=(pairs, 2)) * d * 10 ** rng.uniform(-4, -1, (pairs, 1))
        return np.linalg.norm(self(x) - self(y), axis=1) / np.linalg.norm(x - y, axis=1)


def build_deformation(frames, interfaces: list, delta_prime: float, theta: float,
                      rng: np.random.Generator | None = None, grid: CubeGrid | None = None,
                      strict: bool = True) -> Deformation:
    """Deformation from the interface cubes; raises ``BilipschitzError`` if ``|D Phi - Id| > theta/2``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = grid if grid is not None else getattr(frames, "grid", None)
    if grid is None:
        raise ValueError("a cube grid is required")
    fr = [p.frame for p in interfaces]
    table = CubeTable(grid, fr, list(interfaces), delta_prime)
    dfm = Deformation(table, theta)
    dfm.measure(rng)
    if strict and dfm.dphi_sup > theta / 2:
        raise BilipschitzError(f"|D Phi - Id| = {dfm.dphi_sup:.3g} exceeds theta/2 = {theta / 2:.3g}", dfm.dphi_sup)
    return dfm


# ---------------------------------------------------------------------------
# helpers for polylines in boxes
# ---------------------------------------------------------------------------


def _slab_clip(A, B, lo, hi):
    """Parameter interval of the segments ``A -> B`` inside the boxes ``[lo, hi]``."""
    d = B - A
    t0 = np.zeros(len(A))
    t1 = np.ones(len(A))
    for ax in range(2):
        da = d[:, ax]
        par = np.abs(da) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[:, ax] - A[:, ax]) / da
            tb = (hi[:, ax] - A[:, ax]) / da
        inside = (A[:, ax] >= lo[:, ax]) & (A[:, ax] <= hi[:, ax])
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
    return t0, t1


def _box_length(P, lo, hi) -> np.ndarray:
    """Length inside ``[lo_c, hi_c]`` of each polyline ``P[c]`` (shape ``(C, K, 2)``)."""
    C, K, _ = P.shape
    A = P[:, :-1].reshape(-1, 2)
    B = P[:, 1:].reshape(-1, 2)
    L0 = np.repeat(lo, K - 1, axis=0)
    L1 = np.repeat(hi, K - 1, axis=0)
    t0, t1 = _slab_clip(A, B, L0, L1)
    ln = np.clip(t1 - t0, 0, None) * np.linalg.norm(B - A, axis=1)
    return ln.reshape(C, K - 1).sum(axis=1)


def choose_delta_prime(table_frames: list, interfaces: list | None, delta: float, theta: float,
                       rho0: float = 0.1, g0: Modulus | None = None) -> tuple[float, float]:
    """``delta' = (1 - rho) delta`` with ``rho`` halved until the ring length of ``H cup L`` fits in ``theta``."""
    if not table_frames:
        return (1 - rho0) * delta, 0.0
    g0 = g0 or Modulus("capped", 0.5)
    ys = np.linspace(-delta, delta, 257)
    L = np.array([fr.world(ys, fr.phi(ys)) for fr in table_frames])
    if interfaces is not None:
        Hs = [pl.vertices for pl in interfaces]
        K = max(len(h) for h in Hs)
        H = np.array([np.vstack([h, np.repeat(h[-1:], K - len(h), axis=0)]) for h in Hs])
    else:
        H = L
    qc = np.array([fr.center for fr in table_frames])
    full = _box_length(L, qc - delta / 2, qc + delta / 2) + _box_length(H, qc - delta / 2, qc + delta / 2)
    weight = max(1.0, max(float(g0(np.linalg.norm(fr.jump))) for fr in table_frames))
    rho = rho0
    while True:
        dp = (1 - rho) * delta
        inner = _box_length(L, qc - dp / 2, qc + dp / 2) + _box_length(H, qc - dp / 2, qc + dp / 2)
        ring = float((full - inner).sum())
        if ring * weight <= theta or rho < 1e-9:
            return dp, ring
        rho /= 2


# ---------------------------------------------------------------------------
# split approximant
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SplitApproximant:
    """Plain projection outside the interface cubes and one-sided projections split by ``H_z`` inside.

    ``functions[0]`` is the plain projection; ``functions[1 + 2i]`` and
    ``functions[2 + 2i]`` are the projections of the ``+``/``-`` extensions of
    interface ``keys[i]``.  A piece key is ``3 * (offset + row) + subcell``.
    """

    base: PwAffineFunction
    table: CubeTable
    keys: list
    functions: list
    region: object
    _faces: JumpFaceInventory | None = None

    def __post_init__(self):
        self.kpos = {k: i for i, k in enumerate(self.keys)}
        sizes = [len(F) for F in self.functions]
        self.offsets = np.r_[0, np.cumsum(sizes)[:-1]].astype(np.int64)
        self._size = int(sum(sizes))
        if len(self.table):
            self.fid_plus = np.array([1 + 2 * self.kpos[k] for k in self.table.dom])

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def placement(self) -> GridPlacement:
        return self.base.placement

    def __len__(self) -> int:
        return self._size

    def pieces(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """Gradients and constants of the affine pieces with the given keys."""
        keys = np.asarray(keys, dtype=np.int64)
        g, j = keys // 3, keys % 3
        fid = np.searchsorted(self.offsets, g, side="right") - 1
        G = np.empty((len(keys), self.m, 2))
        c = np.empty((len(keys), self.m))
        for f_ in np.unique(fid):
            sel = np.flatnonzero(fid == f_)
            F = self.functions[f_]
            r = g[sel] - self.offsets[f_]
            G[sel], c[sel] = F.G[r, j[sel]], F.c[r, j[sel]]
        return G, c

    # -- piece selection ----------------------------------------------------

    def _fids(self, x, c) -> np.ndarray:
        fid = np.zeros(len(x), dtype=np.int64)
        m = c >= 0
        if np.any(m):
            sd = self.table.side(x[m], c[m])
            fid[m] = self.fid_plus[c[m]] + (sd < 0)
        return fid

    def keys_for(self, x, fid) -> np.ndarray:
        out = np.empty(len(x), dtype=np.int64)
        for f_ in np.unique(fid):
            sel = np.flatnonzero(fid == f_)
            r, j = self.functions[f_].locate_subcells(x[sel])
            out[sel] = 3 * (self.offsets[f_] + r) + j
        return out

    def keys_at(self, x, c=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        c = self.table.cube_of(x) if c is None else c
        return self.keys_for(x, self._fids(x, c))

    def values(self, keys, x) -> np.ndarray:
        G, c = self.pieces(keys)
        return np.einsum("kmd,kd->km", G, x) + c

    def eval(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if len(self.table) == 0:
            return self.base.eval(x)
        return self.values(self.keys_at(x), x)

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        k = self.keys_at(x)
        return self.pieces(k)[0]

    # -- quadrature ---------------------------------------------------------

    def quadrature(self, r: int = 1, chunk: int = 150_000):
        """Yield ``(points, weights, gradients, values)`` covering the region once."""
        poly = as_polygon(self.region)
        box = _is_box(poly)
        x0, y0, x1, y1 = poly.bounds
        for f_, F in enumerate(self.functions):
            for s in range(0, len(F), chunk):
                rows = np.arange(s, min(len(F), s + chunk))
                sub = _subset(F, rows)
                pts, wts, _ = refined_points(sub, r)
                N, J, Q, _ = pts.shape
                P = pts.reshape(-1, 2)
                Wt = wts.ravel()
                jj = np.broadcast_to(np.arange(3)[None, :, None], (N, J, Q)).ravel()
                rr = np.broadcast_to(rows[:, None, None], (N, J, Q)).ravel()
                if box:
                    ok = (P[:, 0] > x0) & (P[:, 0] < x1) & (P[:, 1] > y0) & (P[:, 1] < y1)
                else:
                    ok = shapely.contains_xy(poly, P[:, 0], P[:, 1])
                c = self.table.cube_of(P[ok]) if len(self.table) else np.full(int(ok.sum()), -1)
                if f_ == 0:
                    good = c < 0
                else:
                    good = c >= 0
                    if np.any(good):
                        gi = np.flatnonzero(good)
                        want = self._fids(P[ok][gi], c[gi])
                        good[gi] = want == f_
                sel = np.flatnonzero(ok)[good]
                if len(sel) == 0:
                    continue
                G = F.G[rr[sel], jj[sel]]
                val = np.einsum("kmd,kd->km", G, P[sel]) + F.c[rr[sel], jj[sel]]
                yield P[sel], Wt[sel], G, val

    # -- jump faces ---------------------------------------------------------

    def jump_faces(self, region=None, tol: float = 1e-12) -> JumpFaceInventory:
        if self._faces is None:
            self._faces = _assemble_faces(self, tol)
        faces = self._faces
        return faces.clip(region) if region is not None and len(faces) else faces


def _subset(F: PwAffineFunction, rows: np.ndarray) -> PwAffineFunction:
    return PwAffineFunction(F.placement, F.cubes[rows], F.tags[rows], F.vertices[rows], F.u[rows], F.s[rows],
                            F.G[rows], F.c[rows], F.region)


def _split_at_grid(faces: JumpFaceInventory, grid: CubeGrid) -> JumpFaceInventory:
    """Cut faces (shorter than a cube side) at the cube grid lines."""
    if len(faces) == 0:
        return faces
    d, g = grid.delta, grid.gamma
    i0 = np.floor((faces.p0 - g) / d + 0.5)
    i1 = np.floor((faces.p1 - g) / d + 0.5)
    D = faces.p1 - faces.p0
    T = [np.zeros(len(faces)), np.ones(len(faces))]
    cuts = []
    for ax in range(2):
        cross = i0[:, ax] != i1[:, ax]
        line = g[ax] + (np.maximum(i0[:, ax], i1[:, ax]) - 0.5) * d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (line - faces.p0[:, ax]) / D[:, ax]
        cuts.append(np.where(cross, np.clip(t, 0, 1), np.nan))
    tt = np.stack(T[:1] + cuts + T[1:], axis=1)
    tt = np.sort(np.where(np.isnan(tt), 1.0, tt), axis=1)
    parts = []
    for a in range(3):
        ta, tb = tt[:, a], tt[:, a + 1]
        m = tb - ta > 1e-14
        if not np.any(m):
            continue
        sub = faces.select(m)
        pa = sub.p0 + ta[m, None] * (sub.p1 - sub.p0)
        pb = sub.p0 + tb[m, None] * (sub.p1 - sub.p0)
        parts.append(JumpFaceInventory(pa, pb, sub.jump_at(ta[m]), sub.jump_at(tb[m]), sub.nu, sub.row, sub.pair))
    return JumpFaceInventory.concat(parts)


def _cut_by_side(w: SplitApproximant, faces: JumpFaceInventory, c: np.ndarray, sign: int) -> JumpFaceInventory:
    """Keep the parts of faces (inside cubes ``c``) lying on the ``sign`` side of ``H``."""
    T = w.table
    s0 = T.side(faces.p0, c)
    s1 = T.side(faces.p1, c)
    sm = T.side(0.5 * (faces.p0 + faces.p1), c)
    good = lambda s: (s >= 0) if sign > 0 else (s < 0)  # noqa: E731
    mixed = ((s0 > 0) & (s1 < 0)) | ((s0 < 0) & (s1 > 0))
    whole = ~mixed & good(sm)
    parts = [faces.select(whole)]
    idx = np.flatnonzero(mixed)
    if len(idx):
        sub = faces.select(idx)
        cc = c[idx]
        lo, hi = np.zeros(len(idx)), np.ones(len(idx))
        sa = s0[idx]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            sv = T.side(sub.p0 + mid[:, None] * (sub.p1 - sub.p0), cc)
            same = np.sign(sv) == np.sign(sa)
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        tc = 0.5 * (lo + hi)
        first = good(sa)
        ta = np.where(first, 0.0, tc)
        tb = np.where(first, tc, 1.0)
        pa = sub.p0 + ta[:, None] * (sub.p1 - sub.p0)
        pb = sub.p0 + tb[:, None] * (sub.p1 - sub.p0)
        parts.append(JumpFaceInventory(pa, pb, sub.jump_at(ta), sub.jump_at(tb), sub.nu, sub.row, sub.pair))
    return JumpFaceInventory.concat(parts)


def _assemble_faces(w: SplitApproximant, tol: float) -> JumpFaceInventory:
    T = w.table
    grid = T.grid
    poly = as_polygon(w.region)
    base_faces = w.base.jump_faces(None, tol)
    if len(T) == 0:
        return base_faces.clip(poly)
    parts = []
    bf = _split_at_grid(base_faces, grid)
    if len(bf):
        c = T.cube_of(0.5 * (bf.p0 + bf.p1))
        parts.append(bf.select(c < 0))
    for i, k in enumerate(w.keys):
        for sign, f_ in ((1, 1 + 2 * i), (-1, 2 + 2 * i)):
            ff = _split_at_grid(w.functions[f_].jump_faces(None, tol), grid)
            if len(ff) == 0:
                continue
            c = T.cube_of(0.5 * (ff.p0 + ff.p1))
            m = c >= 0
            m[m] = T.dom[c[m]] == k
            ff, c = ff.select(m), c[m]
            if len(ff):
                parts.append(_cut_by_side(w, ff, c, sign))
    eps = w.placement.eps
    x0, y0, x1, y1 = poly.bounds
    shrink = 1e-8 * max(1.0, x1 - x0, y1 - y0)
    blo = np.array([x0 + shrink, y0 + shrink])
    bhi = np.array([x1 - shrink, y1 - shrink])
    # faces along H_z
    A, B, CC = [], [], []
    for ci, pl in enumerate(T.interfaces):
        v = pl.vertices
        A.append(v[:-1])
        B.append(v[1:])
        CC.append(np.full(len(v) - 1, ci))
    A, B, CC = np.concatenate(A), np.concatenate(B), np.concatenate(CC)
    qlo, qhi = T.qc[CC] - grid.delta / 2, T.qc[CC] + grid.delta / 2
    t0, t1 = _slab_clip(A, B, np.maximum(qlo, blo), np.minimum(qhi, bhi))
    ok = t1 - t0 > 1e-14
    A, B, CC, t0, t1 = A[ok], B[ok], CC[ok], t0[ok], t1[ok]
    D = B - A
    A, B = A + t0[:, None] * D, A + t1[:, None] * D
    D = B - A
    nu = np.stack([-D[:, 1], D[:, 0]], axis=1) / np.linalg.norm(D, axis=1, keepdims=True)
    # split at the sides of Q''
    r = (grid.delta + T.delta_prime) / 4
    plo, phi_ = T.qc[CC] - r, T.qc[CC] + r
    e0, e1 = _slab_clip(A, B, plo, phi_)
    hit = e1 > e0
    eb_seg = np.concatenate([np.flatnonzero(hit & (e0 > 0)), np.flatnonzero(hit & (e1 < 1))])
    eb_t = np.concatenate([e0[hit & (e0 > 0)], e1[hit & (e1 < 1)]])
    fp = np.array([1 + 2 * w.kpos[k] for k in T.dom])[CC]

    parts.append(_trace_core(w, A, B, nu, lambda x, sg: w.keys_for(x, fp[sg]),
                             lambda x, sg: w.keys_for(x, fp[sg] + 1), eps / 6, (eb_seg, eb_t), tol, 1e-9))
    # cube sides
    parts.append(_side_faces(w, blo, bhi, eps / 6, tol))
    out = JumpFaceInventory.concat([p for p in parts if len(p)])
    if len(out) == 0:
        return JumpFaceInventory.empty(w.m)
    keep = np.maximum(np.abs(out.j0).max(axis=1), np.abs(out.j1).max(axis=1)) > tol
    return out.select(keep).clip(poly)


def _trace_core(w, A, B, nu, probe_plus, probe_minus, spacing, breaks, tol, nudge):
    """Faces along segments ``A -> B`` where the pieces on the two sides of ``nu`` differ.

    Probes map ``(points, segment ids)`` to piece keys; piece changes are
    located by bisection.
    """
    if len(A) == 0:
        return JumpFaceInventory.empty(w.m)
    L = np.linalg.norm(B - A, axis=1)
    n = np.maximum(1, np.ceil(L / spacing).astype(np.int64))
    seg = np.repeat(np.arange(len(A)), n)
    first = np.r_[0, np.cumsum(n)[:-1]]
    loc = np.arange(len(seg)) - np.repeat(first, n)
    t = (loc + 0.5) / n[seg]
    D = B - A

    def keys(sg, tt):
        x = A[sg] + tt[:, None] * D[sg]
        return probe_plus(x + nudge * nu[sg], sg), probe_minus(x - nudge * nu[sg], sg)

    kp, km = keys(seg, t)
    Gp, cp = w.pieces(kp)
    Gm, cm = w.pieces(km)
    scale = 1.0 + np.abs(cp).max(axis=1) + np.abs(cm).max(axis=1)
    active = (np.abs(Gp - Gm).max(axis=(1, 2)) * spacing > 1e-14 * scale) | (np.abs(cp - cm).max(axis=1) > 1e-14 * scale)
    same_seg = seg[1:] == seg[:-1]
    change = same_seg & ((kp[1:] != kp[:-1]) | (km[1:] != km[:-1])) & (active[1:] | active[:-1])
    ci = np.flatnonzero(change)
    bseg, bt = [seg[ci]], []
    if len(ci):
        lo, hi = t[ci].copy(), t[ci + 1].copy()
        k0p, k0m = kp[ci], km[ci]
        sgc = seg[ci]
        for _ in range(36):
            mid = 0.5 * (lo + hi)
            a_, b_ = keys(sgc, mid)
            same = (a_ == k0p) & (b_ == k0m)
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        bt.append(0.5 * (lo + hi))
    else:
        bt.append(np.zeros(0))
    if breaks is not None:
        bseg.append(np.asarray(breaks[0], dtype=np.int64))
        bt.append(np.asarray(breaks[1], dtype=float))
    act_seg = np.zeros(len(A), bool)
    act_seg[seg[active]] = True
    bseg = np.concatenate(bseg + [np.arange(len(A)), np.arange(len(A))])
    bt = np.concatenate(bt + [np.zeros(len(A)), np.ones(len(A))])
    keep = act_seg[bseg]
    bseg, bt = bseg[keep], bt[keep]
    o = np.lexsort((bt, bseg))
    bseg, bt = bseg[o], bt[o]
    i = np.flatnonzero(bseg[1:] == bseg[:-1])
    sg, ta, tb = bseg[i], bt[i], bt[i + 1]
    ok = tb - ta > 1e-13
    sg, ta, tb = sg[ok], ta[ok], tb[ok]
    if len(sg) == 0:
        return JumpFaceInventory.empty(w.m)
    kp2, km2 = keys(sg, 0.5 * (ta + tb))
    pa = A[sg] + ta[:, None] * D[sg]
    pb = A[sg] + tb[:, None] * D[sg]
    j0 = w.values(kp2, pa) - w.values(km2, pa)
    j1 = w.values(kp2, pb) - w.values(km2, pb)
    keepf = np.maximum(np.abs(j0).max(axis=1), np.abs(j1).max(axis=1)) > tol
    k = int(keepf.sum())
    return JumpFaceInventory(pa[keepf], pb[keepf], j0[keepf], j1[keepf], nu[sg][keepf],
                             np.full(k, -1), np.full((k, 2), -1))


def _side_faces(w: SplitApproximant, blo, bhi, spacing: float, tol: float) -> JumpFaceInventory:
    """Mismatch faces on the sides of interface cubes (each shared side once)."""
    T = w.table
    grid = T.grid
    d = grid.delta
    idx = grid.index_of_flat(T.flat)
    A, B, NU, own, nb = [], [], [], [], []
    sides = [((-1, 0), (1.0, 0.0)), ((1, 0), (-1.0, 0.0)), ((0, -1), (0.0, 1.0)), ((0, 1), (0.0, -1.0))]
    for off, inward in sides:
        off = np.array(off)
        inward = np.array(inward)
        nidx = idx + off
        nfl = grid.flat_of_index(nidx)
        nc = np.where(nfl >= 0, T.lookup[np.maximum(nfl, 0)], -1)
        take = (nc < 0) | (T.flat < np.where(nfl >= 0, nfl, np.iinfo(np.int64).max))
        take &= ~((nc >= 0) & (T.flat > nfl))
        cc = np.flatnonzero(take)
        mid = T.qc[cc] + 0.5 * d * off
        tang = np.array([-off[1], off[0]], float)
        a = mid - 0.5 * d * tang
        b = mid + 0.5 * d * tang
        A.append(a)
        B.append(b)
        NU.append(np.repeat(inward[None], len(cc), axis=0))
        own.append(cc)
        nb.append(nc[cc])
    A, B, NU = np.concatenate(A), np.concatenate(B), np.concatenate(NU)
    own, nb = np.concatenate(own), np.concatenate(nb)
    t0, t1 = _slab_clip(A, B, np.repeat(blo[None], len(A), 0), np.repeat(bhi[None], len(A), 0))
    ok = t1 - t0 > 1e-14
    D = B - A
    A2 = A[ok] + t0[ok, None] * D[ok]
    B2 = A[ok] + t1[ok, None] * D[ok]
    own, nb, NU = own[ok], nb[ok], NU[ok]

    def plus(x, sg):
        return w.keys_for(x, w._fids(x, own[sg]))

    def minus(x, sg):
        return w.keys_for(x, w._fids(x, nb[sg]))

    return _trace_core(w, A2, B2, NU, plus, minus, spacing, None, tol, 1e-9)


def _classify_cells(placement: GridPlacement, cubes, tags, T: CubeTable) -> tuple[np.ndarray, dict]:
    """Cells meeting a cube without interface, and per dominant interface the cells meeting its cubes."""
    v = placement.to_space(cell_vertices_int(cubes, tags, 2))
    lo, hi = v.min(axis=1), v.max(axis=1)
    del v
    ilo, ihi = T.grid.index(lo), T.grid.index(hi)
    plain = np.zeros(len(tags), bool)
    R, K = [], []
    for ix in (0, 1):
        for iy in (0, 1):
            ii = np.stack([ihi[:, 0] if ix else ilo[:, 0], ihi[:, 1] if iy else ilo[:, 1]], axis=1)
            fl = T.grid.flat_of_index(ii)
            c = np.where(fl >= 0, T.lookup[np.maximum(fl, 0)], -1)
            m = c >= 0
            plain |= ~m
            R.append(np.flatnonzero(m))
            K.append(T.dom[c[m]])
    R, K = np.concatenate(R), np.concatenate(K)
    out = {}
    if len(R):
        N = len(tags) + 1
        key = np.unique(K.astype(np.int64) * N + R)
        kk, rr = key // N, key % N
        cuts = np.flatnonzero(np.diff(kk)) + 1
        for grp in np.split(np.arange(len(kk)), cuts):
            out[int(kk[grp[0]])] = rr[grp]
    return plain, out


def assemble_approximant(f: SbvField, frames, interfaces: list, eps: float, zeta, region=None,
                         resolver: Callable | None = None, table: CubeTable | None = None,
                         delta_prime: float | None = None) -> SplitApproximant:
    """Split projection over ``region`` (defaults to the bounding box of the frames).

    The plain projection is computed only on cells meeting a cube without
    interface; the one-sided projections only on cells meeting the cubes of
    their interface.
    """
    grid = frames.grid
    if region is None:
        region = shapely.box(*(grid.center(grid.lo) - grid.delta / 2),
                             *(grid.center(grid.lo + np.array(grid.shape) - 1) + grid.delta / 2))
    poly = as_polygon(region)
    if table is None:
        dp = delta_prime if delta_prime is not None else 0.9 * grid.delta
        table = CubeTable(grid, [p.frame for p in interfaces], list(interfaces), dp)
    placement = GridPlacement(eps, tuple(np.asarray(zeta, dtype=float)))
    lo, hi = _region_box(poly)
    cubes, tags = enumerate_many(placement, lo, hi)
    if len(table) == 0:
        base = project_chunked(f, placement, cubes, tags, poly)
        return SplitApproximant(base, table, [], [base], poly)
    if eps >= grid.delta:
        raise ValueError("the mesh size must be smaller than the cube size")
    plain, cells = _classify_cells(placement, cubes, tags, table)
    prow = np.flatnonzero(plain)
    if len(prow) == 0:
        prow = np.array([0])
    base = project_chunked(f, placement, cubes[prow], tags[prow], poly)
    resolver = resolver or f.one_sided
    keys, functions = [], [base]
    for k in sorted(set(int(v) for v in table.dom)):
        rows = cells.get(k)
        if rows is None or len(rows) == 0:
            rows = np.array([0])
        keys.append(k)
        for sign in (1, -1):
            functions.append(project_chunked(resolver(k, sign), placement, cubes[rows], tags[rows], poly))
    return SplitApproximant(base, table, keys, functions, poly)


# ---------------------------------------------------------------------------
# metrics, shift selection and the driver
# ---------------------------------------------------------------------------


@dataclass
class ApproximationResult:
    u_j: SplitApproximant
    phi: Deformation
    metrics: MetricsRecord
    params: dict
    candidates: list = field(default_factory=list)


def approximant_metrics(w: SplitApproximant, f: SbvField, phi: Deformation, cfg: PipelineConfig, region,
                        split_segments=None) -> MetricsRecord:
    poly = as_polygon(region)
    rec = MetricsRecord()
    l1 = lp = bulk = tv = area = 0.0
    p = cfg.p
    for P, Wt, G, val in w.quadrature(cfg.metrics_refine):
        uv = f.eval(P)
        ug = f.grad(P)
        l1 += float((np.linalg.norm(val - uv, axis=1) * Wt).sum())
        gn = np.sqrt((G**2).sum(axis=(1, 2)))
        lp += float((np.sqrt(((G - ug) ** 2).sum(axis=(1, 2))) ** p * Wt).sum())
        bulk += float((cfg.psi(G) * Wt).sum())
        tv += float((gn * Wt).sum())
        area += float((np.sqrt(1 + gn**2) * Wt).sum())
    faces = w.jump_faces(poly)
    rec.l1_distance, rec.lp_grad_distance = l1, lp
    rec.bulk_energy, rec.total_variation, rec.area_functional = bulk, tv, area
    rec.surface_energy = faces_energy(faces, cfg.g)
    rec.jump_variation = faces_g0_energy(faces, Modulus("power", 1.0))
    rec.jump_length = faces.total_length()
    rec.phi_sup, rec.dphi_sup = phi.phi_sup, phi.dphi_sup
    if cfg.discrepancy:
        disc = jump_discrepancy(f, faces, phi, phi.inverse, cfg.g0, poly, split_segments=split_segments,
                                panel=max(w.placement.eps, 1e-4))
        rec.g0_jump_discrepancy, rec.normal_discrepancy, rec.hn1_sym_diff = disc.d1, disc.d2, disc.hn1
    return rec


def _score(m: MetricsRecord, p: float, with_hn1: bool) -> float:
    parts = [m.l1_distance, m.lp_grad_distance, m.g0_jump_discrepancy, m.normal_discrepancy]
    if with_hn1 and math.isfinite(m.hn1_sym_diff):
        parts.append(m.hn1_sym_diff)
    parts = [v for v in parts if not (isinstance(v, float) and math.isnan(v) and v is not m.l1_distance)]
    return float(sum(parts))


def select_index(candidates: list, p: float = 2.0, with_hn1: bool = True) -> int:
    """Index of the candidate with the smallest weighted sum; NaN candidates are excluded, ties keep the first."""
    if len(candidates) < 8:
        raise ValueError("shift selection needs at least 8 candidates")
    best, arg = math.inf, -1
    for i, (_, m) in enumerate(candidates):
        if m is None:
            continue
        vals = [m.l1_distance, m.lp_grad_distance]
        if not all(math.isfinite(v) for v in vals):
            continue
        s = _score(m, p, with_hn1)
        if math.isfinite(s) and s < best:
            best, arg = s, i
    if arg < 0:
        raise ValueError("no finite candidate")
    return arg


def select_shift(candidates: list, p: float = 2.0, with_hn1: bool = True):
    """Shift minimising ``l1 + lp^p + d1 + d2 (+ hn1)`` over ``(zeta, MetricsRecord)`` pairs."""
    return candidates[select_index(candidates, p, with_hn1)][0]


def _split_segments(T: CubeTable):
    if len(T) == 0:
        return None
    A, B = [], []
    for r in (T.b, T.a):
        lo, hi = T.qc - r, T.qc + r
        corners = [lo, np.stack([hi[:, 0], lo[:, 1]], 1), hi, np.stack([lo[:, 0], hi[:, 1]], 1)]
        for i in range(4):
            A.append(corners[i])
            B.append(corners[(i + 1) % 4])
    return np.concatenate(A), np.concatenate(B)


def _resolver_for(work: SbvField, base: SbvField) -> Callable:
    if work is base:
        return base.one_sided
    names = [itf.name for itf in base.interfaces]

    def resolve(k: int, sign: int):
        name = work.interfaces[k].name
        if not name.endswith("|inside"):
            raise NotImplementedError("only interior interfaces are split")
        return base.one_sided(names.index(name[: -len("|inside")]), sign)

    return resolve


@dataclass
class FieldReference:
    """Energies of the input field on the domain (computed once per run)."""

    bulk: float
    surface: float
    g0_energy: float
    total_variation: float
    area: float
    jump_variation: float

    @property
    def energy(self) -> float:
        return self.bulk + self.surface


def field_reference(f: SbvField, region, cfg: PipelineConfig) -> FieldReference:
    poly = as_polygon(region)
    bulk = field_bulk_energy(f, cfg.psi, poly)
    surf = surface_energy(f, cfg.g, poly) if f.interfaces else 0.0
    mu = g0_jump_energy(f, cfg.g0, poly) if f.interfaces else 0.0
    tv, area, jv = strict_metrics(f, poly)
    return FieldReference(bulk, surf, mu, tv, area, jv)


def build_level(f: SbvField, region, theta: float, cfg: PipelineConfig, rng: np.random.Generator,
                eps: float | None = None, mu: float | None = None, work: SbvField | None = None,
                resolver: Callable | None = None) -> dict:
    """Scale analysis, linearization and deformation for one ladder level."""
    work = work or f
    poly = as_polygon(region)
    delta, frames = analyze_scale(work, poly, theta, cfg, rng, mu=mu, resolver=resolver)
    eps = cfg.eps_ratio * delta if eps is None else eps
    tf = [fr for fr in frames if fr.has_interface]
    dp, ring = choose_delta_prime(tf, None, delta, theta, cfg.rho0, cfg.g0)
    beta_cap = theta * (delta - dp) / 48
    r = 1
    dfm, pls = None, []
    while True:
        pls = [linearize_interface(fr, eps, rng, eps / r, beta_cap) for fr in tf]
        # keep only cubes actually crossed by their polyline
        pls = [pl for pl in pls if not pl.piece_in_cube().is_empty]
        for pl in pls:
            pl.frame.delta_prime = dp
        try:
            dfm = build_deformation(frames, pls, dp, theta, rng)
            break
        except BilipschitzError:
            if r >= cfg.node_refine_max:
                dfm = build_deformation(frames, pls, dp, theta, rng, strict=False)
                break
            r *= 2
    _, ring = choose_delta_prime([pl.frame for pl in pls], pls, delta, theta, 1 - dp / delta, cfg.g0)
    return {
        "delta": delta,
        "delta_prime": dp,
        "eps": eps,
        "frames": frames,
        "interfaces": pls,
        "deformation": dfm,
        "node_refine": r,
        "ring_length": ring,
        "bilipschitz_ok": dfm.dphi_sup <= theta / 2,
        "omega": max((pl.omega for pl in pls), default=0.0),
    }


def run_level(f: SbvField, region, theta: float, cfg: PipelineConfig, rng: np.random.Generator,
              eps: float | None = None, mu: float | None = None, work: SbvField | None = None,
              resolver: Callable | None = None) -> ApproximationResult:
    poly = as_polygon(region)
    work = work or f
    lvl = build_level(f, poly, theta, cfg, rng, eps, mu, work, resolver)
    dfm = lvl["deformation"]
    table = dfm.table
    ss = _split_segments(table)
    cands = []
    for _ in range(cfg.n_zeta):
        rec, w, zeta, err = None, None, None, ""
        for _attempt in range(MAX_JITTER):
            zeta = sample_shift(lvl["eps"], rng, 2)
            try:
                w = assemble_approximant(work, lvl["frames"], lvl["interfaces"], lvl["eps"], zeta, poly,
                                         resolver, table)
                rec = approximant_metrics(w, f, dfm, cfg, poly, ss)
                break
            except DegenerateSlice as exc:
                err = str(exc)
                w = rec = None
        cands.append((zeta, rec, w, err))
    table_ = [(z, r) for z, r, _, _ in cands]
    if len(table_) >= 8:
        i = select_index(table_, cfg.p)
    else:
        fin = [k for k, (_, r) in enumerate(table_) if r is not None]
        if not fin:
            raise DegenerateSlice("every shift candidate was degenerate")
        i = fin[0]
    zeta, rec, w, _ = cands[i]
    frames = lvl["frames"]
    params = {
        "theta": theta,
        "delta": lvl["delta"],
        "delta_prime": lvl["delta_prime"],
        "eps": lvl["eps"],
        "zeta": [float(v) for v in zeta],
        "gamma": [float(v) for v in frames.grid.gamma],
        "betas": [pl.beta for pl in lvl["interfaces"]],
        "node_refine": lvl["node_refine"],
        "omega": lvl["omega"],
        "ring_length": lvl["ring_length"],
        "bilipschitz_ok": lvl["bilipschitz_ok"],
        "transport_residual": dfm.transport_residual,
        "scale_report": frames.report,
        "seed": cfg.seed,
    }
    cand_rows = [(z, r) for z, r, _, _ in cands]
    return ApproximationResult(w, dfm, rec, params, cand_rows)


@dataclass
class LevelOutcome:
    level: float
    result: ApproximationResult | None
    row: dict
    error: str = ""


ROW_COLUMNS = [
    "level", "theta", "delta", "delta_prime", "eps", "l1", "lp_grad", "phi_sup", "dphi_sup", "d1", "d2",
    "hn1_sym_diff", "energy_uj", "energy_u", "bulk_uj", "bulk_u", "surface_uj", "surface_u", "g0_energy_uj",
    "g0_energy_u", "tv_uj", "tv_u", "area_uj", "area_u", "jv_uj", "jv_u", "jump_length", "error",
]


def _row(level: float, theta: float, res: ApproximationResult | None, ref: FieldReference, cfg: PipelineConfig,
         err: str = "") -> dict:
    row = {c: math.nan for c in ROW_COLUMNS}
    row.update(level=level, theta=theta, energy_u=ref.energy, bulk_u=ref.bulk, surface_u=ref.surface,
               g0_energy_u=ref.g0_energy, tv_u=ref.total_variation, area_u=ref.area, jv_u=ref.jump_variation,
               error=err)
    if res is not None:
        m = res.metrics
        g0e = faces_g0_energy(res.u_j.jump_faces(res.u_j.region), cfg.g0)
        row.update(delta=res.params["delta"], delta_prime=res.params["delta_prime"], eps=res.params["eps"],
                   l1=m.l1_distance, lp_grad=m.lp_grad_distance, phi_sup=m.phi_sup, dphi_sup=m.dphi_sup,
                   d1=m.g0_jump_discrepancy, d2=m.normal_discrepancy, hn1_sym_diff=m.hn1_sym_diff,
                   energy_uj=m.bulk_energy + m.surface_energy, bulk_uj=m.bulk_energy, surface_uj=m.surface_energy,
                   g0_energy_uj=g0e, tv_uj=m.total_variation, area_uj=m.area_functional, jv_uj=m.jump_variation,
                   jump_length=m.jump_length)
    return row


def run_convergence(f: SbvField, region, ladder, config: PipelineConfig | None = None, ladder_kind: str = "theta",
                    theta_for_eps: float = 0.5) -> list[LevelOutcome]:
    """One approximation per ladder level; failures are recorded and later levels still run.

    ``ladder_kind = "eps"`` keeps ``theta`` fixed (``theta_for_eps``) and uses each
    entry as the mesh size.
    """
    cfg = config or PipelineConfig()
    poly = as_polygon(region)
    rng = np.random.default_rng(cfg.seed)
    ref = field_reference(f, poly, cfg)
    out = []
    for lev in ladder:
        theta = float(lev) if ladder_kind == "theta" else theta_for_eps
        eps = None if ladder_kind == "theta" else float(lev)
        try:
            work, resolver = f, None
            if cfg.extension == "reflect":
                work, _ = extend_field(f, LipschitzDomain(np.asarray(poly.exterior.coords)), theta, cfg.p, cfg.g0, rng)
                resolver = _resolver_for(work, f)
            res = run_level(f, poly, theta, cfg, rng, eps, ref.g0_energy, work, resolver)
            out.append(LevelOutcome(float(lev), res, _row(float(lev), theta, res, ref, cfg)))
        except (ScaleError, DegenerateSlice, ArithmeticError, ValueError) as exc:
            msg = f"{type(exc).__name__}: {exc}"
            out.append(LevelOutcome(float(lev), None, _row(float(lev), theta, None, ref, cfg, msg), msg))
    return out
