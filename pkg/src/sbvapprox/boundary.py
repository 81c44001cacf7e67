"""Pseudo-normal, collar map and reflection across the boundary of a polygon.

The pseudo-normal blends the outer edge normals with smooth bumps of the
squared edge distances and is normalised near the boundary.  The collar map
``f(x, t) = x + t psi(x)`` over boundary points ``x`` is inverted by a
bracketed scalar root search in arclength; the reflection sends
``f(x, t)`` to ``f(x, -t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from .field import (
    Curve,
    Interface,
    Modulus,
    PolylineCurve,
    SbvField,
    SmoothMap,
    _pts,
)


class DomainError(ValueError):
    """Invalid polygon or failed collar construction."""


class ReflectionError(ArithmeticError):
    """Inverse collar map could not be computed."""


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LipschitzDomain:
    """Simple polygon with counterclockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DomainError("polygon needs at least three planar vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        poly = shapely.Polygon(v)
        if not poly.is_valid or not poly.exterior.is_simple:
            raise DomainError("polygon is not simple")
        if poly.area <= 0:
            raise DomainError("polygon has no area")
        if not poly.exterior.is_ccw:
            v = v[::-1]
        object.__setattr__(self, "vertices", v)

    @classmethod
    def box(cls, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> "LipschitzDomain":
        return cls(np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]))

    @classmethod
    def regular(cls, k: int, center=(0.5, 0.5), radius: float = 0.5) -> "LipschitzDomain":
        a = 2 * np.pi * np.arange(k) / k
        return cls(np.asarray(center) + radius * np.stack([np.cos(a), np.sin(a)], 1))

    @property
    def polygon(self) -> shapely.Polygon:
        return shapely.Polygon(self.vertices)

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    @property
    def edge_lengths(self) -> np.ndarray:
        a, b = self.edges
        return np.linalg.norm(b - a, axis=1)

    @property
    def normals(self) -> np.ndarray:
        """Outer unit normals (right of the counterclockwise tangent)."""
        a, b = self.edges
        d = (b - a) / self.edge_lengths[:, None]
        return np.stack([d[:, 1], -d[:, 0]], 1)

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=2)))

    def lipschitz_parameters(self) -> tuple[float, float]:
        """``(eps0, L0)``: cover radius and graph Lipschitz constant from corner angles."""
        nrm = self.normals
        prev = np.roll(nrm, 1, axis=0)
        turn = np.arccos(np.clip((nrm * prev).sum(1), -1, 1))
        half = (np.pi - turn) / 2  # half interior angle
        L0 = float(np.max(1.0 / np.tan(np.maximum(half, 1e-6))))
        eps0 = float(0.5 * self.edge_lengths.min())
        return eps0, max(L0, 0.0)

    def contains(self, x) -> np.ndarray:
        x = _pts(x)
        return shapely.contains_xy(self.polygon, x[:, 0], x[:, 1])

    def signed_distance(self, x) -> np.ndarray:
        """Negative inside, positive outside."""
        x = _pts(x)
        d = shapely.distance(self.polygon.exterior, shapely.points(x))
        return np.where(self.contains(x), -d, d)

    def arclength_point(self, sigma) -> np.ndarray:
        sigma = np.mod(np.asarray(sigma, dtype=float), self.perimeter)
        cum = np.concatenate([[0.0], np.cumsum(self.edge_lengths)])
        i = np.clip(np.searchsorted(cum, sigma, side="right") - 1, 0, len(self.vertices) - 1)
        a, b = self.edges
        f = (sigma - cum[i]) / self.edge_lengths[i]
        return a[i] + f[..., None] * (b[i] - a[i])

    def arclength_of(self, x) -> np.ndarray:
        x = _pts(x)
        return shapely.line_locate_point(self.polygon.exterior, shapely.points(x))


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    ok = s < 1
    out[ok] = np.exp(1 - 1 / (1 - s[ok]))
    return out


def _segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances ``(k, E)`` from points to segments."""
    d = b - a
    w = np.einsum("ked,ed->ke", x[:, None] - a[None], d) / (d * d).sum(1)
    w = np.clip(w, 0, 1)
    proj = a[None] + w[..., None] * d[None]
    return np.linalg.norm(x[:, None] - proj, axis=2)


# ---------------------------------------------------------------------------
# pseudo-normal
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PseudoNormal:
    domain: LipschitzDomain
    radius: float
    gamma: float = math.nan
    c1_norm: float = math.nan

    def raw(self, x) -> np.ndarray:
        x = _pts(x)
        a, b = self.domain.edges
        d = _segment_distance(x, a, b)
        th = _bump((d / self.radius) ** 2)
        return th @ self.domain.normals

    def __call__(self, x) -> np.ndarray:
        x = _pts(x)
        ps = self.raw(x)
        dist = shapely.distance(self.domain.polygon.exterior, shapely.points(x))
        # zero near the boundary, positive away from it so the quotient stays smooth
        phi = np.clip(dist / self.radius - 0.5, 0, None) ** 2
        return ps / np.sqrt((ps * ps).sum(1) + phi)[:, None]

    def jacobian(self, x, h: float = 1e-7) -> np.ndarray:
        x = _pts(x)
        cols = [(self(x + h * e) - self(x - h * e)) / (2 * h) for e in np.eye(2)]
        return np.stack(cols, axis=-1)


def build_pseudo_normal(d: LipschitzDomain, mollify_radius: float, samples: int = 1000,
                        rng: np.random.Generator | None = None) -> PseudoNormal:
    if not mollify_radius < 0.5 * d.edge_lengths.min():
        raise DomainError("mollify radius must be below half the shortest edge")
    pn = PseudoNormal(d, mollify_radius)
    rng = rng or np.random.default_rng(0)
    sig = np.concatenate([rng.uniform(0, d.perimeter, samples), np.concatenate([[0.0], np.cumsum(d.edge_lengths)[:-1]])])
    pts = d.arclength_point(sig)
    psi = pn(pts)
    edge = _edge_index(d, sig)
    nu = d.normals[edge]
    # at a corner both adjacent normals count
    dots = (psi * nu).sum(1)
    corner = np.isclose(np.mod(sig, d.perimeter)[:, None], np.concatenate([[0.0], np.cumsum(d.edge_lengths)[:-1]])[None], rtol=0, atol=1e-12).any(1)
    if np.any(corner):
        prev = d.normals[(edge - 1) % len(d.vertices)]
        dots[corner] = np.minimum(dots[corner], (psi[corner] * prev[corner]).sum(1))
    pn.gamma = float(dots.min())
    jac = pn.jacobian(d.arclength_point(rng.uniform(0, d.perimeter, 200)) + rng.normal(0, mollify_radius / 10, (200, 2)))
    pn.c1_norm = float(1.0 + np.abs(jac).max())
    if pn.gamma <= 0:
        raise DomainError(f"pseudo-normal lower bound {pn.gamma:.3g} <= 0")
    return pn


def _edge_index(d: LipschitzDomain, sigma) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(d.edge_lengths)])
    s = np.mod(np.asarray(sigma, dtype=float), d.perimeter)
    return np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(d.vertices) - 1)


# ---------------------------------------------------------------------------
# collar reflection
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CollarReflection:
    domain: LipschitzDomain
    psi: PseudoNormal
    width: float
    bilipschitz: float = math.nan
    involution_residual: float = math.nan
    _outer: shapely.Polygon | None = field(default=None, repr=False)
    _inner: shapely.Polygon | None = field(default=None, repr=False)

    def collar_map(self, sigma, t) -> np.ndarray:
        x = self.domain.arclength_point(sigma)
        return x + np.asarray(t, dtype=float)[..., None] * self.psi(x)

    def boundary_curve(self, t: float, samples_per_edge: int = 64) -> np.ndarray:
        """Closed polyline ``{f(x, t)}`` traced along the boundary."""
        d = self.domain
        cum = np.concatenate([[0.0], np.cumsum(d.edge_lengths)])
        sig = np.concatenate([np.linspace(cum[i], cum[i + 1], samples_per_edge, endpoint=False) for i in range(len(d.vertices))])
        pts = self.collar_map(sig, np.full(len(sig), t))
        return np.vstack([pts, pts[:1]])

    @property
    def outer_polygon(self) -> shapely.Polygon:
        if self._outer is None:
            self._outer = shapely.Polygon(self.boundary_curve(self.width))
        return self._outer

    @property
    def inner_polygon(self) -> shapely.Polygon:
        if self._inner is None:
            self._inner = shapely.Polygon(self.boundary_curve(-self.width))
        return self._inner

    def in_collar(self, y) -> np.ndarray:
        y = _pts(y)
        inside_outer = shapely.contains_xy(self.outer_polygon, y[:, 0], y[:, 1]) | shapely.intersects_xy(self.outer_polygon.exterior, y[:, 0], y[:, 1])
        in_inner = shapely.contains_xy(self.inner_polygon, y[:, 0], y[:, 1])
        return inside_outer & ~in_inner

    def inverse(self, y, grid: int = 24, iters: int = 70) -> tuple[np.ndarray, np.ndarray]:
        """``(sigma, t)`` with ``f(sigma, t) = y``."""
        y = _pts(y)
        d = self.domain
        P = d.perimeter
        s0 = d.arclength_of(y)
        w = min(P / 2, 4 * self.width / max(self.psi.gamma, 1e-3) + 2 * self.psi.radius)
        offs = np.linspace(-w, w, grid)
        S = s0[:, None] + offs[None]
        F = self._F(np.repeat(y, grid, axis=0), S.ravel()).reshape(len(y), grid)
        sgn = np.sign(F)
        change = sgn[:, :-1] * sgn[:, 1:] <= 0
        if not np.all(change.any(1)):
            raise ReflectionError("no bracket for the collar inverse")
        # bracket closest to the nearest boundary point
        mid = (grid - 1) / 2
        score = np.where(change, np.abs(np.arange(grid - 1) + 0.5 - mid)[None], np.inf)
        k = np.argmin(score, axis=1)
        lo = S[np.arange(len(y)), k]
        hi = S[np.arange(len(y)), k + 1]
        flo = F[np.arange(len(y)), k]
        for _ in range(iters):
            m = 0.5 * (lo + hi)
            fm = self._F(y, m)
            same = np.sign(fm) == np.sign(flo)
            lo = np.where(same, m, lo)
            flo = np.where(same, fm, flo)
            hi = np.where(same, hi, m)
        sig = 0.5 * (lo + hi)
        x = d.arclength_point(sig)
        ps = self.psi(x)
        t = ((y - x) * ps).sum(1) / (ps * ps).sum(1)
        res = np.linalg.norm(x + t[:, None] * ps - y, axis=1)
        if np.any(res > 1e-9 * max(1.0, d.diameter)):
            raise ReflectionError(f"collar inverse residual {res.max():.3g}")
        return np.mod(sig, P), t

    def _F(self, y, sigma):
        x = self.domain.arclength_point(sigma)
        ps = self.psi(x)
        r = y - x
        return r[:, 0] * ps[:, 1] - r[:, 1] * ps[:, 0]

    def reflect(self, y) -> np.ndarray:
        y = _pts(y)
        sig, t = self.inverse(y)
        return self.collar_map(sig, -t)

    def reflect_checked(self, y) -> np.ndarray:
        y = _pts(y)
        if not np.all(self.in_collar(y)):
            raise ReflectionError("point outside the collar")
        return self.reflect(y)

    def sample_collar(self, k: int, rng: np.random.Generator, frac: float = 0.95) -> np.ndarray:
        sig = rng.uniform(0, self.domain.perimeter, k)
        t = rng.uniform(-frac * self.width, frac * self.width, k)
        return self.collar_map(sig, t)


def build_reflection(d: LipschitzDomain, width: float | None = None, radius: float | None = None,
                     rng: np.random.Generator | None = None, validate: int = 500) -> CollarReflection:
    """Collar reflection; the width is halved until inversion succeeds on a validation sample."""
    rng = rng or np.random.default_rng(0)
    radius = radius or 0.2 * d.edge_lengths.min()
    psi = build_pseudo_normal(d, radius, rng=rng)
    eps0, L0 = d.lipschitz_parameters()
    if width is None:
        width = min(eps0 / (1 + L0), 0.5 * radius) / 4
    for _ in range(30):
        c = CollarReflection(d, psi, width)
        try:
            y = c.sample_collar(validate, rng)
            z = c.reflect(y)
            back = c.reflect(z)
            c.involution_residual = float(np.abs(back - y).max())
            if c.involution_residual <= 1e-9 * d.diameter:
                c.bilipschitz = measure_bilipschitz(c, rng, pairs=2000)
                return c
        except ReflectionError:
            pass
        width /= 2
    raise DomainError("collar construction failed")


def bilipschitz_ratios(c: CollarReflection, rng: np.random.Generator, pairs: int = 10_000,
                       scale: float | None = None) -> np.ndarray:
    """``|R x - R y| / |x - y|`` over random nearby pairs in the collar."""
    scale = scale or c.width / 10
    x = c.sample_collar(pairs, rng, frac=0.9)
    y = x + rng.normal(0, scale, x.shape)
    ok = c.in_collar(y)
    x, y = x[ok], y[ok]
    px, py = c.reflect(x), c.reflect(y)
    return np.linalg.norm(px - py, axis=1) / np.linalg.norm(x - y, axis=1)


def measure_bilipschitz(c: CollarReflection, rng: np.random.Generator, pairs: int = 10_000,
                        scale: float | None = None) -> float:
    r = bilipschitz_ratios(c, rng, pairs, scale)
    return float(max(r.max(), 1 / r.min()))


def projection_bound(c: CollarReflection, rng: np.random.Generator, pairs: int = 1000) -> float:
    """Largest ``|x - y| / |(Id - psi psi^T)(x - y)|`` over boundary sample pairs (diagnostic)."""
    d = c.domain
    s = rng.uniform(0, d.perimeter, pairs)
    ds = rng.uniform(-c.psi.radius, c.psi.radius, pairs)
    x, y = d.arclength_point(s), d.arclength_point(s + ds)
    ps = c.psi(x)
    v = y - x
    proj = v - (v * ps).sum(1)[:, None] * ps
    nv = np.linalg.norm(v, axis=1)
    ok = nv > 1e-12
    return float(np.max(nv[ok] / np.maximum(np.linalg.norm(proj[ok], axis=1), 1e-300)))


# ---------------------------------------------------------------------------
# extension operator
# ---------------------------------------------------------------------------


class _ClippedCurve(Curve):
    """A curve whose crossings are kept only inside (or outside) a polygon."""

    def __init__(self, base: Curve, poly: shapely.Polygon, keep_inside: bool = True):
        self.base = base
        self.poly = poly
        self.keep_inside = keep_inside
        self.tau_range = base.tau_range
        self.closed = base.closed

    def point(self, tau):
        return self.base.point(tau)

    def deriv(self, tau):
        return self.base.deriv(tau)

    def param_of(self, x):
        return self.base.param_of(x)

    def tau_box(self, lo, hi):
        return self.base.tau_box(lo, hi)

    def breaks(self):
        return self.base.breaks()

    def crossings(self, a, b):
        a, b = _pts(a), _pts(b)
        seg, t, nu = self.base.crossings(a, b)
        x = a[seg] + t[:, None] * (b[seg] - a[seg])
        ins = shapely.contains_xy(self.poly, x[:, 0], x[:, 1])
        keep = ins if self.keep_inside else ~ins
        return seg[keep], t[keep], nu[keep]


@dataclass(eq=False)
class ExtendedField(SbvField):
    """``u`` in the domain, ``u o Phi`` in the outer collar and zero beyond."""

    base: SbvField
    reflection: CollarReflection
    side_step: float = 1e-9

    def __post_init__(self):
        self.m = self.base.m
        dom = self.reflection.domain.polygon
        itfs: list[Interface] = []
        for itf in self.base.interfaces:
            cc = _ClippedCurve(itf.curve, dom, True)
            itfs.append(Interface(cc, itf.amplitude, name=f"{itf.name}|inside"))
            for poly in self._reflected_polylines(itf):
                pc = PolylineCurve(poly)
                itfs.append(Interface(pc, self._reflected_jump(itf, pc), name=f"{itf.name}|reflected"))
        outer = PolylineCurve(self.reflection.boundary_curve(self.reflection.width))
        itfs.append(Interface(outer, self._two_sided(outer), name="outer-collar"))
        self.interfaces = itfs

    def _reflected_polylines(self, itf: Interface, samples: int = 4000) -> list[np.ndarray]:
        c = self.reflection
        box = c.outer_polygon.bounds
        rng_ = itf.curve.tau_box(box[:2], box[2:])
        if rng_ is None:
            return []
        tau = np.linspace(rng_[0], rng_[1], samples)
        pts = itf.curve.point(tau)
        dom = c.domain.polygon
        inside = shapely.contains_xy(dom, pts[:, 0], pts[:, 1])
        keep = inside & shapely.contains_xy(c.outer_polygon, pts[:, 0], pts[:, 1]) & ~shapely.contains_xy(c.inner_polygon, pts[:, 0], pts[:, 1])
        out = []
        idx = np.flatnonzero(keep)
        if len(idx) < 2:
            return out
        runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
        for r in runs:
            if len(r) < 2:
                continue
            # include the boundary crossing so the image meets the domain boundary
            lo_t, hi_t = tau[max(r[0] - 1, 0)], tau[min(r[-1] + 1, len(tau) - 1)]
            tt = np.linspace(lo_t, hi_t, len(r) + 2)
            p = itf.curve.point(tt)
            p[0] = _snap_to_boundary(dom, p[0], p[1])
            p[-1] = _snap_to_boundary(dom, p[-1], p[-2])
            ins = shapely.contains_xy(dom, p[:, 0], p[:, 1]) | shapely.intersects_xy(dom.exterior.buffer(1e-12), p[:, 0], p[:, 1])
            p = p[ins]
            if len(p) < 2:
                continue
            try:
                out.append(c.reflect(p))
            except Exception:
                continue
        return out

    def _region_value(self, x):
        x = _pts(x)
        c = self.reflection
        dom = c.domain.polygon
        out = np.zeros((len(x), self.m))
        ins = shapely.contains_xy(dom, x[:, 0], x[:, 1])
        out[ins] = self.base.eval(x[ins])
        coll = ~ins & c.in_collar(x)
        if np.any(coll):
            out[coll] = self.base.eval(c.reflect(x[coll]))
        return out

    def eval(self, x):
        return self._region_value(x)

    def grad(self, x, h: float = 1e-7):
        x = _pts(x)
        c = self.reflection
        dom = c.domain.polygon
        out = np.zeros((len(x), self.m, 2))
        ins = shapely.contains_xy(dom, x[:, 0], x[:, 1])
        out[ins] = self.base.grad(x[ins])
        coll = ~ins & c.in_collar(x)
        if np.any(coll):
            y = x[coll]
            py = c.reflect(y)
            D = np.stack([(c.reflect(y + h * e) - c.reflect(y - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
            out[coll] = np.einsum("kmd,kde->kme", self.base.grad(py), D)
        return out

    def _two_sided(self, curve: Curve) -> SmoothMap:
        """Jump across ``curve`` by evaluating the extension on both sides."""

        def val(x):
            x = _pts(x)
            nu = curve.normal(curve.param_of(x))
            nu = nu / np.linalg.norm(nu, axis=1, keepdims=True)
            h = self.side_step
            return self._region_value(x + h * nu) - self._region_value(x - h * nu)

        return SmoothMap(val, lambda x: np.zeros((len(_pts(x)), self.m, 2)), self.m)

    def _reflected_jump(self, itf: Interface, pc: PolylineCurve, h: float = 1e-7) -> SmoothMap:
        """Jump across the image of an interface: the amplitude at the preimage, signed by orientation."""
        c = self.reflection

        def val(y):
            y = _pts(y)
            z = c.reflect(y)
            nu = pc.normal(pc.param_of(y))
            push = c.reflect(y + h * nu) - c.reflect(y - h * nu)
            nj = itf.curve.normal(itf.curve.param_of(z))
            sgn = np.sign((push * nj).sum(1))
            return sgn[:, None] * itf.amplitude.value(z)

        return SmoothMap(val, lambda x: np.zeros((len(_pts(x)), self.m, 2)), self.m)

    def increments(self, p: float, g0: Modulus, panels: int = 64, order: int = 8) -> tuple[float, float]:
        """Bulk ``int |grad U|^p`` and g0 surface energy added in the outer collar."""
        c = self.reflection
        d = c.domain
        cum = np.concatenate([[0.0], np.cumsum(d.edge_lengths)])
        g, w = np.polynomial.legendre.leggauss(order)
        g, w = 0.5 * (g + 1), 0.5 * w
        # sigma panels per edge, t panels across the collar
        edges_s = np.concatenate([np.linspace(cum[i], cum[i + 1], panels + 1)[:-1] for i in range(len(d.vertices))] + [[cum[-1]]])
        s_lo, s_len = edges_s[:-1], np.diff(edges_s)
        t_edges = np.linspace(0.0, c.width, 9)
        S = (s_lo[:, None] + s_len[:, None] * g[None]).ravel()
        WS = (s_len[:, None] * w[None]).ravel()
        T = (t_edges[:-1, None] + np.diff(t_edges)[:, None] * g[None]).ravel()
        WT = (np.diff(t_edges)[:, None] * w[None]).ravel()
        SS, TT = np.meshgrid(S, T, indexing="ij")
        W = np.outer(WS, WT).ravel()
        SS, TT = SS.ravel(), TT.ravel()
        hs = 1e-7
        ds = (c.collar_map(SS + hs, TT) - c.collar_map(SS - hs, TT)) / (2 * hs)
        dt = c.psi(d.arclength_point(SS))
        det = np.abs(ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0])
        z = c.collar_map(SS, -TT)
        dsz = (c.collar_map(SS + hs, -TT) - c.collar_map(SS - hs, -TT)) / (2 * hs)
        Dy = np.stack([ds, dt], axis=-1)
        Dz = np.stack([dsz, -dt], axis=-1)
        DPhi = Dz @ np.linalg.inv(Dy)
        gu = np.einsum("kmd,kde->kme", self.base.grad(z), DPhi)
        bulk = float(np.sum(W * det * np.sqrt((gu**2).sum(axis=(1, 2))) ** p))
        surf = 0.0
        for itf in self.interfaces:
            if not itf.name.endswith("reflected"):
                continue
            P = itf.curve.points
            mid = 0.5 * (P[1:] + P[:-1])
            ln = np.linalg.norm(np.diff(P, axis=0), axis=1)
            out = ~d.contains(mid)
            if np.any(out):
                src = _base_interface(self.base, itf.name)
                amp = src.amplitude.value(c.reflect(mid[out]))
                surf += float(np.sum(ln[out] * g0(np.linalg.norm(amp, axis=1))))
        return bulk, surf


def _base_interface(f: SbvField, name: str) -> Interface:
    base = name.rsplit("|", 1)[0]
    for itf in f.interfaces:
        if itf.name == base:
            return itf
    raise KeyError(name)


def _snap_to_boundary(dom: shapely.Polygon, p, q):
    seg = shapely.LineString([p, q])
    hit = shapely.intersection(seg, dom.exterior)
    if hit.is_empty:
        return p
    pts = np.asarray(getattr(hit, "geoms", [hit])[0].coords)[0]
    return pts


def extend_field(f: SbvField, d: LipschitzDomain, theta: float, p: float = 2.0,
                 g0: Modulus | None = None, rng: np.random.Generator | None = None,
                 min_width: float = 1e-4) -> tuple[ExtendedField, dict]:
    """Extension across the boundary with bulk and g0 increments at most ``theta``."""
    g0 = g0 or Modulus("capped", 0.5)
    refl = build_reflection(d, rng=rng)
    width = refl.width
    last = None
    while width >= min_width:
        c = CollarReflection(d, refl.psi, width)
        c.bilipschitz, c.involution_residual = refl.bilipschitz, refl.involution_residual
        U = ExtendedField(f, c)
        bulk, surf = U.increments(p, g0)
        last = (bulk, surf)
        if bulk <= theta and surf <= theta:
            return U, {"width": width, "bulk_increment": bulk, "surface_increment": surf}
        width /= 2
    raise DomainError(f"extension increments {last} exceed theta={theta} at minimum collar width")
