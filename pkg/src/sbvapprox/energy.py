"""Bulk and surface energies, strict metrics and jump-set discrepancies.

Energies of projected functions are exact sums over subcells (polygon
clipping against the region).  Energies of fields use adaptive tensor Gauss
rules on boxes; boxes cut by an interface are refined and, at the finest
level, split along the chord through the crossing points so that each piece
is integrated with a smooth one-sided extension.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import shapely
from shapely import STRtree

from .field import DegenerateSlice, Modulus, SbvField, StackedLines, as_polygon, curve_intervals
from .projector import JumpFaceInventory, PwAffineFunction, subcell_areas_in


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BulkDensity:
    """``power``: |xi|^p, ``area``: sqrt(1 + |xi|^2), ``callable``: user function with growth constant."""

    kind: str = "power"
    p: float = 2.0
    fn: Callable | None = None
    growth_constant: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "area", "callable"):
            raise ValueError(f"unknown bulk density {self.kind!r}")
        if self.kind == "callable" and self.fn is None:
            raise ValueError("callable density needs fn")

    def __call__(self, G) -> np.ndarray:
        G = np.asarray(G, dtype=float)
        nrm = np.sqrt((G.reshape(G.shape[0], -1) ** 2).sum(axis=1)) if G.ndim > 1 else np.abs(G)
        if self.kind == "power":
            return nrm**self.p
        if self.kind == "area":
            return np.sqrt(1.0 + nrm**2)
        return np.asarray(self.fn(G), dtype=float)

    def growth_check(self, rng: np.random.Generator, m: int = 1, samples: int = 2000) -> bool:
        """Spot check ``|Psi(xi)| <= C (|xi|^p + 1)`` on random matrices of varied scale."""
        G = rng.normal(size=(samples, m, 2)) * 10 ** rng.uniform(-3, 3, (samples, 1, 1))
        nrm = np.sqrt((G**2).sum(axis=(1, 2)))
        p = self.p if self.kind != "area" else 1.0
        C = self.growth_constant if self.kind == "callable" else 1.0 + (self.kind == "area")
        return bool(np.all(np.abs(self(G)) <= C * (nrm**p + 1) + 1e-12))


@dataclass(frozen=True)
class SurfaceDensity:
    """``g0``: g0(|s|), ``constant``: alpha, ``anisotropic``: g0(|s|) rho(nu)."""

    kind: str = "g0"
    modulus: Modulus = field(default_factory=Modulus)
    alpha: float = 1.0
    rho: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("g0", "constant", "anisotropic"):
            raise ValueError(f"unknown surface density {self.kind!r}")
        if self.kind == "anisotropic" and self.rho is None:
            object.__setattr__(self, "rho", lambda nu: 1.0 + 0.5 * np.abs(nu[..., 0]))

    def __call__(self, s, nu) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        nu = np.atleast_2d(np.asarray(nu, dtype=float))
        if self.kind == "constant":
            return np.full(len(s), self.alpha)
        base = self.modulus(np.linalg.norm(s, axis=1))
        if self.kind == "anisotropic":
            base = base * self.rho(nu)
        return base

    def hypothesis_check(self, rng: np.random.Generator, samples: int = 2000, m: int = 1) -> dict:
        s = rng.normal(size=(samples, m)) * 10 ** rng.uniform(-2, 1, (samples, 1))
        s2 = rng.normal(size=(samples, m)) * 10 ** rng.uniform(-3, 0, (samples, 1))
        ang = rng.uniform(0, 2 * np.pi, samples)
        nu = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        sym = np.allclose(self(-s, -nu), self(s, nu))
        if self.kind == "constant":
            pert = True
        else:
            C = 1.0 if self.kind == "g0" else 1.5
            lhs = np.abs(self(s + s2, nu) - self(s, nu))
            pert = bool(np.all(lhs <= C * self.modulus(np.linalg.norm(s2, axis=1)) + 1e-12))
        return {"symmetric": bool(sym), "perturbation": pert}


# ---------------------------------------------------------------------------
# metrics record
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    l1_distance: float = math.nan
    lp_grad_distance: float = math.nan
    phi_sup: float = math.nan
    dphi_sup: float = math.nan
    g0_jump_discrepancy: float = math.nan
    normal_discrepancy: float = math.nan
    hn1_sym_diff: float = math.nan
    bulk_energy: float = math.nan
    surface_energy: float = math.nan
    total_variation: float = math.nan
    area_functional: float = math.nan
    jump_variation: float = math.nan
    jump_length: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


# ---------------------------------------------------------------------------
# bulk energies
# ---------------------------------------------------------------------------


def pw_bulk_energy(pw: PwAffineFunction, psi: BulkDensity, region, eta=None) -> float:
    """``sum Psi(G_j - eta) |T_j cap region|`` (exact in the plane)."""
    areas = subcell_areas_in(pw, region)
    G = pw.G if eta is None else pw.G - np.asarray(eta).reshape(1, 1, pw.m, 2)
    vals = psi(G.reshape(-1, pw.m, 2)).reshape(len(pw), 3)
    return float((vals * areas).sum())


_GX, _GW = np.polynomial.legendre.leggauss(8)


def _box_rule(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss points ``(B, 64, 2)`` and weights ``(B, 64)`` for boxes."""
    h = hi - lo
    xs = lo[:, None, 0] + h[:, None, 0] * (_GX[None] + 1) / 2
    ys = lo[:, None, 1] + h[:, None, 1] * (_GX[None] + 1) / 2
    X = np.repeat(xs, 8, axis=1)
    Y = np.tile(ys, (1, 8))
    W = np.outer(_GW, _GW).ravel()[None] * (h[:, 0] * h[:, 1] / 4)[:, None]
    return np.stack([X, Y], axis=-1), W


def _tri_rule(tris: np.ndarray, order: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on triangles ``(T, 3, 2)``."""
    x, w = np.polynomial.legendre.leggauss(order)
    a = (x + 1) / 2
    wa = w / 2
    U, V = np.meshgrid(a, a, indexing="ij")
    WU, WV = np.meshgrid(wa, wa, indexing="ij")
    s = U.ravel()
    t = (V * (1 - U)).ravel()
    wt = (WU * WV * (1 - U)).ravel()
    P0, P1, P2 = tris[:, 0], tris[:, 1], tris[:, 2]
    pts = P0[:, None] + s[None, :, None] * (P1 - P0)[:, None] + t[None, :, None] * (P2 - P0)[:, None]
    det = np.abs((P1[:, 0] - P0[:, 0]) * (P2[:, 1] - P0[:, 1]) - (P1[:, 1] - P0[:, 1]) * (P2[:, 0] - P0[:, 0]))
    return pts, wt[None] * det[:, None]


def _triangulate(poly) -> np.ndarray:
    if poly.is_empty:
        return np.zeros((0, 3, 2))
    tris = shapely.constrained_delaunay_triangles(poly)
    out = [np.asarray(t.exterior.coords)[:3] for t in getattr(tris, "geoms", [tris]) if t.area > 0]
    return np.array(out) if out else np.zeros((0, 3, 2))


def _boxes_cut(f: SbvField, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Boxes whose boundary is crossed by an interface or that contain a closed one."""
    B = len(lo)
    corners = [lo, np.stack([hi[:, 0], lo[:, 1]], 1), hi, np.stack([lo[:, 0], hi[:, 1]], 1)]
    A = np.concatenate(corners)
    Bv = np.concatenate(corners[1:] + corners[:1])
    cut = np.zeros(B, bool)
    if isinstance(f, StackedLines):
        lv = f._sorted
        i0 = np.searchsorted(lv, lo[:, 1], side="left")
        i1 = np.searchsorted(lv, hi[:, 1], side="right")
        return i1 > i0
    for itf in f.interfaces:
        try:
            seg, _, _ = itf.curve.crossings(A, Bv)
        except DegenerateSlice:
            return np.ones(B, bool)
        cut[seg % B] = True
        if itf.curve.closed:
            c = itf.curve.point(np.linspace(0, 2 * np.pi, 9)[:-1])
            for q in c:
                cut |= np.all((q >= lo) & (q <= hi), axis=1)
    return cut


def field_bulk_energy(f: SbvField, psi: BulkDensity, region, eta=None, h_smooth: float = 1 / 8,
                      h_min: float = 1 / 512) -> float:
    """``int_region Psi(grad u - eta)`` by adaptive box quadrature."""
    poly = as_polygon(region)
    x0, y0, x1, y1 = poly.bounds
    eta_arr = None if eta is None else np.asarray(eta, dtype=float).reshape(1, f.m, 2)

    def integrand(src: SbvField, pts: np.ndarray) -> np.ndarray:
        G = src.grad(pts)
        if eta_arr is not None:
            G = G - eta_arr
        return psi(G)

    n0 = max(1, int(math.ceil(max(x1 - x0, y1 - y0) / h_smooth)))
    hx, hy = (x1 - x0) / n0, (y1 - y0) / n0
    I, J = np.meshgrid(np.arange(n0), np.arange(n0), indexing="ij")
    lo = np.stack([x0 + I.ravel() * hx, y0 + J.ravel() * hy], 1)
    hi = lo + np.array([hx, hy])
    total = 0.0
    tri_parts: list = []
    while len(lo):
        boxes = shapely.box(lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1])
        inside = shapely.contains(poly, boxes)
        meets = shapely.intersects(poly, boxes)
        cut = np.zeros(len(lo), bool) if getattr(f, "continuous_gradient", False) else _boxes_cut(f, lo, hi)
        size = (hi - lo).max(axis=1)
        finest = size <= h_min * 1.0001
        # smooth interior boxes: tensor Gauss
        sel = inside & ~cut
        if np.any(sel):
            P, W = _box_rule(lo[sel], hi[sel])
            total += float((integrand(f, P.reshape(-1, 2)).reshape(W.shape) * W).sum())
        # boundary boxes without interfaces: triangulate box cap region
        sel_b = meets & ~inside & ~cut
        for k in np.flatnonzero(sel_b):
            tris = _triangulate(shapely.intersection(boxes[k], poly))
            if len(tris):
                tri_parts.append((f, tris))
        # finest cut boxes: split along the chord
        sel_f = meets & cut & finest
        for k in np.flatnonzero(sel_f):
            piece = shapely.intersection(boxes[k], poly)
            tri_parts.extend(_split_cut_box(f, lo[k], hi[k], piece))
        ref = meets & cut & ~finest
        if not np.any(ref):
            break
        l, h = lo[ref], hi[ref]
        m_ = 0.5 * (l + h)
        lo = np.concatenate([l, np.stack([m_[:, 0], l[:, 1]], 1), m_, np.stack([l[:, 0], m_[:, 1]], 1)])
        hi = np.concatenate([m_, np.stack([h[:, 0], m_[:, 1]], 1), h, np.stack([m_[:, 0], h[:, 1]], 1)])
    groups: dict = {}
    for src, tris in tri_parts:
        groups.setdefault(id(src), [src, []])[1].append(tris)
    for src, lst in groups.values():
        tris = np.concatenate(lst)
        P, W = _tri_rule(tris)
        total += float((integrand(src, P.reshape(-1, 2)).reshape(W.shape) * W).sum())
    return total


def _split_cut_box(f: SbvField, lo, hi, piece) -> list:
    """Split a small box along the chord of its single interface crossing."""
    if piece.is_empty:
        return []
    A = np.array([lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    Bv = np.roll(A, -1, axis=0)
    hits = []
    try:
        for k, itf in enumerate(f.interfaces):
            seg, t, _ = itf.curve.crossings(A, Bv)
            for sg, tt in zip(seg, t):
                hits.append((k, A[sg] + tt * (Bv[sg] - A[sg])))
    except DegenerateSlice:
        hits = []
    ks = {k for k, _ in hits}
    if len(hits) != 2 or len(ks) != 1:
        return [(f, _triangulate(piece))]
    k = hits[0][0]
    p, q = hits[0][1], hits[1][1]
    d = q - p
    if np.linalg.norm(d) == 0:
        return [(f, _triangulate(piece))]
    nrm = np.array([-d[1], d[0]])
    far = 4 * np.linalg.norm(hi - lo)
    dn = d / np.linalg.norm(d)
    half_a = shapely.Polygon([p - far * dn, q + far * dn, q + far * dn + far * nrm / np.linalg.norm(nrm), p - far * dn + far * nrm / np.linalg.norm(nrm)])
    out = []
    level = f.interfaces[k].curve.level
    for part in (shapely.intersection(piece, half_a), shapely.difference(piece, half_a)):
        if part.is_empty or part.area == 0:
            continue
        c = np.asarray(part.representative_point().coords)[0]
        try:
            side = +1 if (level is not None and level(c[None])[0] > 0) else -1
            src = f.one_sided(k, side)
            if level is None:
                src = f
        except NotImplementedError:
            src = f
        out.append((src, _triangulate(part)))
    return out


def bulk_energy(target, psi: BulkDensity, region, eta=None) -> float:
    if isinstance(target, PwAffineFunction):
        return pw_bulk_energy(target, psi, region, eta)
    if hasattr(target, "bulk_energy"):
        return target.bulk_energy(psi, region, eta)
    return field_bulk_energy(target, psi, region, eta)


# ---------------------------------------------------------------------------
# surface energies
# ---------------------------------------------------------------------------


def _power_antideriv(v, q):
    return np.sign(v) * np.abs(v) ** (q + 1) / (q + 1)


def _int_abs_power(a, b, q):
    """``int_0^1 |a + b t|^q dt`` for arrays, closed form."""
    out = np.empty_like(a)
    small = np.abs(b) < 1e-14 * np.maximum(1.0, np.abs(a))
    out[small] = np.abs(a[small]) ** q
    bb = b[~small]
    aa = a[~small]
    v0, v1 = aa, aa + bb
    # piecewise monotone; split at the zero
    out[~small] = np.where(
        v0 * v1 >= 0,
        np.abs(_power_antideriv(v1, q) - _power_antideriv(v0, q)) / np.abs(bb),
        (np.abs(v0) ** (q + 1) + np.abs(v1) ** (q + 1)) / ((q + 1) * np.abs(bb)),
    )
    return out


def _int_capped(a, b, q):
    """``int_0^1 min(1, |a + b t|^q) dt``."""
    total = np.zeros_like(a)
    small = np.abs(b) < 1e-14 * np.maximum(1.0, np.abs(a))
    total[small] = np.minimum(1.0, np.abs(a[small]) ** q)
    aa, bb = a[~small], b[~small]
    # |v| <= 1 on t in [(-1 - a)/b, (1 - a)/b]
    t1, t2 = (-1 - aa) / bb, (1 - aa) / bb
    lo = np.clip(np.minimum(t1, t2), 0, 1)
    hi = np.clip(np.maximum(t1, t2), 0, 1)
    inner_len = hi - lo
    inner = np.zeros_like(aa)
    ok = inner_len > 0
    va, vb = aa[ok] + bb[ok] * lo[ok], aa[ok] + bb[ok] * hi[ok]
    inner[ok] = np.where(
        va * vb >= 0,
        np.abs(_power_antideriv(vb, q) - _power_antideriv(va, q)) / np.abs(bb[ok]),
        (np.abs(va) ** (q + 1) + np.abs(vb) ** (q + 1)) / ((q + 1) * np.abs(bb[ok])),
    )
    total[~small] = inner + (1 - inner_len)
    return total


def segment_modulus_integral(j0: np.ndarray, j1: np.ndarray, g0: Modulus, order: int = 24) -> np.ndarray:
    """``int_0^1 g0(|j0 + t (j1 - j0)|) dt`` per face."""
    j0 = np.atleast_2d(j0)
    j1 = np.atleast_2d(j1)
    if j0.shape[1] == 1:
        a, b = j0[:, 0], (j1 - j0)[:, 0]
        if g0.kind == "power":
            return _int_abs_power(a, b, g0.q)
        if g0.kind == "capped":
            return _int_capped(a, b, g0.q)
        return segment_modulus_integral(j0, j1, g0.base) + _int_abs_power(a, b, 1.0)
    # vector jumps: split at the closest approach to zero and grade toward it
    d = j1 - j0
    dd = (d * d).sum(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tm = np.clip(np.where(dd > 0, -(j0 * d).sum(1) / dd, 0.0), 0, 1)
    x, w = np.polynomial.legendre.leggauss(order)
    s = (x + 1) / 2
    ws = w / 2
    total = np.zeros(len(j0))
    for lo_, hi_, toward_hi in ((np.zeros_like(tm), tm, True), (tm, np.ones_like(tm), False)):
        L = hi_ - lo_
        # quadratic grading concentrates nodes at the split point
        g = 1 - (1 - s) ** 2 if toward_hi else s**2
        dg = 2 * (1 - s) if toward_hi else 2 * s
        t = lo_[:, None] + L[:, None] * g[None]
        v = j0[:, None, :] + t[..., None] * d[:, None, :]
        total += (g0(np.linalg.norm(v, axis=2)) * (ws * dg)[None]).sum(1) * L
    return total


def faces_g0_energy(faces: JumpFaceInventory, g0: Modulus) -> float:
    if len(faces) == 0:
        return 0.0
    return float((segment_modulus_integral(faces.j0, faces.j1, g0) * faces.lengths).sum())


def faces_energy(faces: JumpFaceInventory, g: SurfaceDensity) -> float:
    if len(faces) == 0:
        return 0.0
    if g.kind == "constant":
        return g.alpha * faces.total_length()
    vals = segment_modulus_integral(faces.j0, faces.j1, g.modulus) * faces.lengths
    if g.kind == "anisotropic":
        vals = vals * g.rho(faces.nu)
    return float(vals.sum())


def surface_energy(jumps, g: SurfaceDensity, region=None) -> float:
    """Surface energy of a face inventory or of a field's interfaces."""
    if isinstance(jumps, JumpFaceInventory):
        faces = jumps if region is None else jumps.clip(region)
        return faces_energy(faces, g)
    from .field import curve_integral, jump_set_length

    f = jumps
    if g.kind == "constant":
        return g.alpha * jump_set_length(f, region)
    if isinstance(f, StackedLines):
        from .field import _stacked_energy

        return _stacked_energy(f, lambda a: float(g(a[None], np.array([[0.0, 1.0]]))[0]), region)
    total = 0.0
    for itf in f.interfaces:
        def integrand(tau, itf=itf):
            return g(itf.jump(tau), itf.normal(tau))

        total += curve_integral(itf.curve, integrand, region)
    return total


# ---------------------------------------------------------------------------
# strict metrics
# ---------------------------------------------------------------------------


def strict_metrics(target, region) -> tuple[float, float, float]:
    """``(int |grad|, int sqrt(1 + |grad|^2), int |[.]|)``."""
    tv = bulk_energy(target, BulkDensity("power", 1.0), region)
    area = bulk_energy(target, BulkDensity("area"), region)
    if isinstance(target, PwAffineFunction):
        jv = faces_g0_energy(target.jump_faces(region), Modulus("power", 1.0))
    elif hasattr(target, "jump_faces"):
        jv = faces_g0_energy(target.jump_faces(region), Modulus("power", 1.0))
    else:
        from .field import jump_variation

        jv = jump_variation(target, region)
    return tv, area, jv


# ---------------------------------------------------------------------------
# jump-set discrepancies
# ---------------------------------------------------------------------------


@dataclass
class Discrepancy:
    d1: float
    d2: float
    hn1: float
    matched_length: float
    unmatched_field_length: float
    unmatched_face_length: float


def _field_quadrature(f: SbvField, region, split_segments, panel: float, order: int = 4):
    """Gauss points on ``J_u cap region``: ``(points, weights, jumps, normals)``."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    P, W, Jv, NU = [], [], [], []
    if split_segments is not None and len(split_segments[0]):
        SA, SB = split_segments
    else:
        SA = SB = None
    for itf in f.interfaces:
        curve = itf.curve
        for lo, hi in curve_intervals(curve, region):
            cuts = [lo, hi]
            if SA is not None:
                try:
                    seg, t, _ = curve.crossings(SA, SB)
                except DegenerateSlice:
                    seg, t = np.zeros(0, int), np.zeros(0)
                if len(seg):
                    taus = curve.param_of(SA[seg] + t[:, None] * (SB[seg] - SA[seg]))
                    cuts.extend(taus[(taus > lo) & (taus < hi)].tolist())
            cuts.extend([c for c in curve.breaks() if lo < c < hi])
            cuts = np.unique(cuts)
            # panels no longer than ``panel`` in arclength (speed-based estimate)
            edges = [cuts[0]]
            for a, b in zip(cuts[:-1], cuts[1:]):
                mid = 0.5 * (a + b)
                speed = float(np.linalg.norm(curve.deriv(np.array([mid]))[0]))
                k = max(1, int(math.ceil((b - a) * speed / panel)))
                edges.extend(np.linspace(a, b, k + 1)[1:].tolist())
            edges = np.array(edges)
            a, b = edges[:-1], edges[1:]
            tau = (a[:, None] + (b - a)[:, None] * (xg[None] + 1) / 2).ravel()
            w = ((b - a)[:, None] * wg[None] / 2).ravel()
            speed = np.linalg.norm(curve.deriv(tau), axis=1)
            P.append(curve.point(tau))
            W.append(w * speed)
            Jv.append(itf.jump(tau))
            NU.append(curve.normal(tau))
    if not P:
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, f.m)), np.zeros((0, 2))
    return np.concatenate(P), np.concatenate(W), np.concatenate(Jv), np.concatenate(NU)


def _face_tree(faces: JumpFaceInventory):
    lines = shapely.linestrings(np.stack([faces.p0, faces.p1], axis=1))
    return STRtree(lines), lines


def _match_points(faces: JumpFaceInventory, y: np.ndarray, tol: float):
    """For each point, index of a face within ``tol`` (or -1) and the fraction along it."""
    idx = np.full(len(y), -1, dtype=np.int64)
    frac = np.zeros(len(y))
    if len(faces) == 0 or len(y) == 0:
        return idx, frac
    tree, _ = _face_tree(faces)
    pts = shapely.points(y)
    qi, fi = tree.query(pts, predicate="dwithin", distance=tol)
    # keep the first face per point (faces sharing an endpoint give equal jumps up to the tie)
    first = np.unique(qi, return_index=True)
    qsel, fsel = first[0], fi[first[1]]
    idx[qsel] = fsel
    d = faces.p1[fsel] - faces.p0[fsel]
    frac[qsel] = np.clip(np.einsum("kd,kd->k", y[qsel] - faces.p0[fsel], d) / np.einsum("kd,kd->k", d, d), 0, 1)
    return idx, frac


def jump_discrepancy(f: SbvField, faces: JumpFaceInventory, phi: Callable, phi_inv: Callable, g0: Modulus,
                     region, face_matched: np.ndarray | None = None, split_segments=None,
                     panel: float | None = None, match_tol: float = 1e-9, fd_step: float = 1e-7) -> Discrepancy:
    """Discrepancies between ``J_u`` and the pulled-back jump faces.

    ``d1 = int g0(|[u] - [w] o Phi|)`` and ``d2 = int g0(|[u]| + |[w] o Phi|) |nu_u - nu_w o Phi|``
    over ``J_u cup Phi^{-1}(J_w)``, and ``hn1`` the length of the symmetric
    difference.  Normals of ``w`` are extended by zero off its jump set and
    oriented to agree with ``nu_u`` at matched points.
    """
    faces = faces.clip(region) if len(faces) else faces
    if panel is None:
        L = faces.lengths
        panel = float(np.median(L)) / 2 if len(L) else 0.05
        panel = min(max(panel, 1e-5), 0.05)
    P, W, Ju, Nu = _field_quadrature(f, region, split_segments, panel)
    y = phi(P) if len(P) else P
    idx, frac = _match_points(faces, y, match_tol)
    hit = idx >= 0
    d1 = d2 = 0.0
    jw = np.zeros_like(Ju)
    nw = np.zeros_like(Nu)
    if np.any(hit):
        sub = faces.select(idx[hit])
        jw[hit] = sub.jump_at(frac[hit])
        nw[hit] = sub.nu
        flip = np.einsum("kd,kd->k", nw[hit], Nu[hit]) < 0
        jw_h, nw_h = jw[hit], nw[hit]
        jw_h[flip] *= -1
        nw_h[flip] *= -1
        jw[hit], nw[hit] = jw_h, nw_h
    aj = np.linalg.norm(Ju, axis=1)
    d1 += float((g0(np.linalg.norm(Ju - jw, axis=1)) * W).sum())
    d2 += float((g0(aj + np.linalg.norm(jw, axis=1)) * np.linalg.norm(Nu - nw, axis=1) * W).sum())
    matched_len = float(W[hit].sum())
    unmatched_u = float(W[~hit].sum())
    # faces without a preimage on J_u
    if face_matched is None:
        face_matched = _faces_on_field(f, faces, phi_inv)
    fm = ~np.asarray(face_matched, bool)
    unmatched_face = 0.0
    if np.any(fm):
        uf = faces.select(fm)
        xg, wg = np.polynomial.legendre.leggauss(3)
        t = (xg + 1) / 2
        pts = uf.p0[:, None] + t[None, :, None] * (uf.p1 - uf.p0)[:, None]
        tang = (uf.p1 - uf.p0) / np.maximum(uf.lengths, 1e-300)[:, None]
        flat = pts.reshape(-1, 2)
        tt = np.repeat(tang, len(t), axis=0)
        h = fd_step
        jt = np.linalg.norm(phi_inv(flat + h * tt) - phi_inv(flat - h * tt), axis=1) / (2 * h)
        jv = uf.j0[:, None] + t[None, :, None] * (uf.j1 - uf.j0)[:, None]
        gv = g0(np.linalg.norm(jv, axis=2)).ravel()
        ww = (np.repeat(uf.lengths[:, None], len(t), axis=1) * wg[None] / 2).ravel()
        d1 += float((gv * jt * ww).sum())
        d2 += float((gv * jt * ww).sum())
        unmatched_face = float((jt * ww).sum())
    return Discrepancy(d1, d2, unmatched_u + unmatched_face, matched_len, unmatched_u, unmatched_face)


def _faces_on_field(f: SbvField, faces: JumpFaceInventory, phi_inv: Callable, tol: float = 1e-8) -> np.ndarray:
    """Whether each face midpoint pulls back onto ``J_u``."""
    if len(faces) == 0:
        return np.zeros(0, bool)
    mid = 0.5 * (faces.p0 + faces.p1)
    x = phi_inv(mid)
    nu = faces.nu
    a, b = x - tol * nu, x + tol * nu
    hit = np.zeros(len(mid), bool)
    for itf in f.interfaces:
        try:
            seg, _, _ = itf.curve.crossings(a, b)
        except DegenerateSlice:
            continue
        hit[seg] = True
    return hit


def hn1_sym_diff(f: SbvField, faces: JumpFaceInventory, phi: Callable, phi_inv: Callable, region, **kw) -> float:
    return jump_discrepancy(f, faces, phi, phi_inv, Modulus("power", 1.0), region, **kw).hn1


def identity_map(x):
    return np.asarray(x, dtype=float)


def interfaces_as_faces(f: SbvField, region, panel: float = 0.01) -> JumpFaceInventory:
    """Polygonal face inventory tracing the interfaces of a field (for comparisons)."""
    P0, P1, J0, J1, NU = [], [], [], [], []
    for itf in f.interfaces:
        for lo, hi in curve_intervals(itf.curve, region):
            speed = float(np.linalg.norm(itf.curve.deriv(np.array([0.5 * (lo + hi)]))[0]))
            k = max(1, int(math.ceil((hi - lo) * speed / panel)))
            tau = np.linspace(lo, hi, k + 1)
            pts = itf.curve.point(tau)
            jj = itf.jump(tau)
            P0.append(pts[:-1])
            P1.append(pts[1:])
            J0.append(jj[:-1])
            J1.append(jj[1:])
            NU.append(itf.curve.normal(0.5 * (tau[:-1] + tau[1:])))
    if not P0:
        return JumpFaceInventory.empty(f.m)
    return JumpFaceInventory(np.concatenate(P0), np.concatenate(P1), np.concatenate(J0), np.concatenate(J1),
                             np.concatenate(NU))
