"""Projection of fields onto discontinuous piecewise-affine functions.

On every cell of the shifted, scaled triangulation the vertex values are the
field values and the edge jumps are the cumulated jumps of the field along the
edges; the single-simplex interpolant then defines the function cell by cell.
All cells of a region are built at once with array operations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from .field import DegenerateSlice, SbvField, SmoothMap, as_polygon
from .interp import CellData, CellInterpolant, bary_affine, batch_coefficients
from .mesh import (
    BARY_TOL,
    CellId,
    GridPlacement,
    Simplex,
    cell_vertices_int,
    enumerate_many,
    locate_many,
    sample_shift,
)

MAX_JITTER = 8


class OutsideRegion(ValueError):
    """Evaluation point not covered by the projected cells."""


def _n_pairs(k: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


@dataclass(eq=False)
class PwAffineFunction:
    """Cells of ``zeta + eps * T0`` with per-subcell affine pieces.

    Arrays are indexed by cell row: ``cubes (N, n)``, ``tags (N,)``,
    ``vertices (N, n+1, n)``, ``u (N, n+1, m)``, ``s (N, n+1, n+1, m)``,
    ``G (N, n+1, m, n)`` and ``c (N, n+1, m)``.
    """

    placement: GridPlacement
    cubes: np.ndarray
    tags: np.ndarray
    vertices: np.ndarray
    u: np.ndarray
    s: np.ndarray
    G: np.ndarray = None
    c: np.ndarray = None
    region: object = None
    _lookup: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.G is None:
            self.G, self.c = batch_coefficients(self.vertices, self.u, self.s)
        n = self.placement.n
        lo = self.cubes.min(axis=0)
        hi = self.cubes.max(axis=0)
        shape = tuple(hi - lo + 1) + (math.factorial(n),)
        grid = np.full(shape, -1, dtype=np.int64)
        grid[tuple((self.cubes - lo).T) + (self.tags,)] = np.arange(len(self.tags))
        self._lookup = {"lo": lo, "grid": grid}
        self._bary = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def n(self) -> int:
        return self.placement.n

    @property
    def m(self) -> int:
        return self.u.shape[-1]

    def __len__(self) -> int:
        return len(self.tags)

    @property
    def bary(self) -> tuple[np.ndarray, np.ndarray]:
        if self._bary is None:
            self._bary = bary_affine(self.vertices)
        return self._bary

    def row_of(self, cubes, tags) -> np.ndarray:
        lo, grid = self._lookup["lo"], self._lookup["grid"]
        rel = np.asarray(cubes) - lo
        ok = np.all((rel >= 0) & (rel < np.array(grid.shape[:-1])), axis=1)
        rows = np.full(len(rel), -1, dtype=np.int64)
        rows[ok] = grid[tuple(rel[ok].T) + (np.asarray(tags)[ok],)]
        return rows

    def rows(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cubes, tags = locate_many(self.placement, x)
        r = self.row_of(cubes, tags)
        bad = np.flatnonzero(r < 0)
        if len(bad):
            r[bad] = self._rows_fallback(x[bad])
            if np.any(r < 0):
                raise OutsideRegion("point outside the projected region")
        return r

    def _rows_fallback(self, x: np.ndarray) -> np.ndarray:
        # points on the border of the covered cells: lowest present cell containing them
        n = self.n
        y = self.placement.to_lattice(x)
        base = np.floor(y).astype(np.int64)
        out = np.full(len(x), -1, dtype=np.int64)
        offsets = sorted(itertools.product((-1, 0, 1), repeat=n))
        for off in offsets:
            cubes = base + np.array(off)
            for tag in range(math.factorial(n)):
                tags = np.full(len(x), tag)
                rows = self.row_of(cubes, tags)
                todo = (out < 0) & (rows >= 0)
                if not np.any(todo):
                    continue
                lam = self.lam(rows[todo], x[todo])
                ok = np.all(lam >= -1e-9, axis=1)
                idx = np.flatnonzero(todo)[ok]
                out[idx] = rows[todo][ok]
        return out

    def cell_ids(self) -> list[CellId]:
        return [CellId(tuple(int(v) for v in cu), int(t)) for cu, t in zip(self.cubes, self.tags)]

    def cell_data(self, row: int) -> CellData:
        return CellData(Simplex(self.vertices[row]), self.u[row], self.s[row])

    def interpolant(self, row: int) -> CellInterpolant:
        return CellInterpolant(self.cell_data(row), self.G[row], self.c[row])

    def lam(self, rows, x) -> np.ndarray:
        if self._bary is not None:
            B, b = self._bary
            return np.einsum("kjd,kd->kj", B[rows], x) + b[rows]
        B, b = bary_affine(self.vertices[rows])
        return np.einsum("kjd,kd->kj", B, x) + b

    def locate_subcells(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = self.rows(x)
        lam = self.lam(r, x)
        top = lam.max(axis=1, keepdims=True)
        j = np.argmax(lam >= top - BARY_TOL, axis=1)
        return r, j

    # -- evaluation --------------------------------------------------------

    def eval(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r, j = self.locate_subcells(x)
        return np.einsum("kmd,kd->km", self.G[r, j], x) + self.c[r, j]

    def grad(self, x) -> np.ndarray:
        r, j = self.locate_subcells(x)
        return self.G[r, j]

    def subcell_volumes(self) -> np.ndarray:
        """``(N,)`` volume of each subcell (all subcells of a cell are equal)."""
        v = self.vertices
        e = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)
        return np.abs(np.linalg.det(e)) / math.factorial(self.n) / (self.n + 1)

    # -- jump faces --------------------------------------------------------

    def jump_faces(self, region=None, tol: float = 1e-12, chunk: int = 500_000) -> "JumpFaceInventory":
        """Internal subcell faces with a nonzero jump (n = 2)."""
        if self.n != 2:
            raise NotImplementedError("face inventory is implemented in the plane")
        parts = [self._faces_block(np.arange(i, min(len(self), i + chunk)), tol)
                 for i in range(0, max(len(self), 1), chunk)]
        inv = JumpFaceInventory.concat(parts)
        if region is not None:
            inv = inv.clip(region)
        return inv

    def _faces_block(self, rows: np.ndarray, tol: float) -> "JumpFaceInventory":
        v = self.vertices[rows]
        cen = v.mean(axis=1)
        P0, P1, J0, J1, NU, ROW, PAIR = [], [], [], [], [], [], []
        for i, j in _n_pairs(3):
            mid = 0.5 * (v[:, i] + v[:, j])
            # jump v_i - v_j = sum_k lambda_k (s_jk - s_ik)
            w = self.s[rows, j] - self.s[rows, i]  # (N, 3, m)
            lam_mid = np.zeros(3)
            lam_mid[[i, j]] = 0.5
            j0 = np.einsum("k,nkm->nm", lam_mid, w)
            j1 = w.mean(axis=1)
            k = np.flatnonzero(np.maximum(np.linalg.norm(j0, axis=1), np.linalg.norm(j1, axis=1)) > tol)
            d = cen[k] - mid[k]
            nu = np.stack([-d[:, 1], d[:, 0]], axis=1)
            nu /= np.linalg.norm(nu, axis=1, keepdims=True)
            flip = np.einsum("nd,nd->n", nu, v[k, i] - mid[k]) < 0
            nu[flip] *= -1
            P0.append(mid[k])
            P1.append(cen[k])
            J0.append(j0[k])
            J1.append(j1[k])
            NU.append(nu)
            ROW.append(rows[k])
            PAIR.append(np.full((len(k), 2), (i, j)))
        return JumpFaceInventory(
            np.concatenate(P0), np.concatenate(P1), np.concatenate(J0), np.concatenate(J1),
            np.concatenate(NU), np.concatenate(ROW), np.concatenate(PAIR),
        )


@dataclass(eq=False)
class JumpFaceInventory:
    """Straight faces ``p0 -> p1`` with jumps affine from ``j0`` to ``j1``.

    ``nu`` points to the side whose value is the minuend of the jump.
    """

    p0: np.ndarray
    p1: np.ndarray
    j0: np.ndarray
    j1: np.ndarray
    nu: np.ndarray
    row: np.ndarray | None = None
    pair: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.p0)

    @classmethod
    def empty(cls, m: int = 1) -> "JumpFaceInventory":
        z2 = np.zeros((0, 2))
        zm = np.zeros((0, m))
        return cls(z2, z2, zm, zm, z2, np.zeros(0, int), np.zeros((0, 2), int))

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.p1 - self.p0, axis=1)

    def total_length(self) -> float:
        return float(self.lengths.sum())

    def select(self, mask) -> "JumpFaceInventory":
        def pick(a):
            return None if a is None else a[mask]

        return JumpFaceInventory(
            self.p0[mask], self.p1[mask], self.j0[mask], self.j1[mask], self.nu[mask],
            pick(self.row), pick(self.pair),
        )

    @staticmethod
    def concat(items: list["JumpFaceInventory"]) -> "JumpFaceInventory":
        m = items[0].j0.shape[1] if items else 1
        items = [it for it in items if len(it)]
        if not items:
            return JumpFaceInventory.empty(m)
        has_meta = all(it.row is not None and it.pair is not None for it in items)
        return JumpFaceInventory(
            np.concatenate([it.p0 for it in items]), np.concatenate([it.p1 for it in items]),
            np.concatenate([it.j0 for it in items]), np.concatenate([it.j1 for it in items]),
            np.concatenate([it.nu for it in items]),
            np.concatenate([it.row for it in items]) if has_meta else None,
            np.concatenate([it.pair for it in items]) if has_meta else None,
        )

    def jump_at(self, t) -> np.ndarray:
        """Jump at fraction ``t`` (per face) along each face."""
        t = np.asarray(t, dtype=float)[:, None]
        return self.j0 + t * (self.j1 - self.j0)

    def clip(self, region) -> "JumpFaceInventory":
        """Restrict the faces to a polygonal region, cutting the straddling ones."""
        poly = as_polygon(region)
        if len(self) == 0:
            return self
        L = self.lengths
        ins0 = shapely.contains_xy(poly, self.p0[:, 0], self.p0[:, 1])
        ins1 = shapely.contains_xy(poly, self.p1[:, 0], self.p1[:, 1])
        bnd = poly.boundary
        dist = shapely.distance(bnd, shapely.points(self.p0))
        full = ins0 & ins1 & (dist > L)
        near = ~full & (dist <= L + 1e-15)
        parts = [self.select(full)]
        idx = np.flatnonzero(near)
        if len(idx):
            lines = shapely.linestrings(np.stack([self.p0[idx], self.p1[idx]], axis=1))
            cut = shapely.intersection(lines, poly)
            P0, P1, T0, T1, src = [], [], [], [], []
            for k, g in zip(idx, cut):
                if g.is_empty:
                    continue
                geoms = getattr(g, "geoms", [g])
                for h in geoms:
                    if h.geom_type != "LineString" or h.length <= 0:
                        continue
                    c = np.asarray(h.coords)
                    d = self.p1[k] - self.p0[k]
                    dd = d @ d
                    ta = float((c[0] - self.p0[k]) @ d / dd)
                    tb = float((c[-1] - self.p0[k]) @ d / dd)
                    if ta > tb:
                        ta, tb = tb, ta
                    P0.append(self.p0[k] + ta * d)
                    P1.append(self.p0[k] + tb * d)
                    T0.append(ta)
                    T1.append(tb)
                    src.append(k)
            if src:
                src = np.array(src)
                T0, T1 = np.array(T0), np.array(T1)
                sub = self.select(src)
                jj0 = sub.jump_at(T0)
                jj1 = sub.jump_at(T1)
                parts.append(JumpFaceInventory(np.array(P0), np.array(P1), jj0, jj1, sub.nu, sub.row, sub.pair))
        return JumpFaceInventory.concat(parts) if any(len(p) for p in parts) else JumpFaceInventory.empty(self.j0.shape[1])


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def _region_box(region) -> tuple[np.ndarray, np.ndarray]:
    poly = as_polygon(region)
    x0, y0, x1, y1 = poly.bounds
    return np.array([x0, y0]), np.array([x1, y1])


def _keys(lat: np.ndarray, lo: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return np.ravel_multi_index(tuple((lat - lo).T), tuple(dims))


def project_cells(f: SbvField, placement: GridPlacement, cubes: np.ndarray, tags: np.ndarray,
                  region=None) -> PwAffineFunction:
    """Projection of ``f`` on the given cells."""
    n = placement.n
    lat = cell_vertices_int(cubes, tags, n)  # (N, n+1, n)
    N = len(tags)
    flat = lat.reshape(-1, n)
    lo = flat.min(axis=0)
    dims = flat.max(axis=0) - lo + 1
    keys = _keys(flat, lo, dims)
    uk, vinv = np.unique(keys, return_inverse=True)
    upts = np.stack(np.unravel_index(uk, tuple(dims)), axis=1) + lo
    vals = f.eval(placement.to_space(upts))
    m = vals.shape[1]
    u = vals[vinv].reshape(N, n + 1, m)
    vid = vinv.reshape(N, n + 1)
    pairs = _n_pairs(n + 1)
    ea = np.stack([vid[:, i] for i, _ in pairs], axis=1)
    eb = np.stack([vid[:, j] for _, j in pairs], axis=1)
    lo_id, hi_id = np.minimum(ea, eb), np.maximum(ea, eb)
    ekey = lo_id.astype(np.int64) * len(uk) + hi_id
    ek, einv = np.unique(ekey.ravel(), return_inverse=True)
    A = placement.to_space(upts[ek // len(uk)])
    B = placement.to_space(upts[ek % len(uk)])
    js = f.jump_sum(A, B)  # oriented low id -> high id
    sgn = np.where(ea <= eb, 1.0, -1.0)
    jv = js[einv].reshape(N, len(pairs), m) * sgn[..., None]
    s = np.zeros((N, n + 1, n + 1, m))
    for q, (i, j) in enumerate(pairs):
        s[:, i, j] = jv[:, q]
        s[:, j, i] = -jv[:, q]
    verts = placement.to_space(lat)
    return PwAffineFunction(placement, cubes, tags, verts, u, s, region=region)


def project(f: SbvField, eps: float, zeta, region) -> PwAffineFunction:
    """Projection ``Pi_{eps,zeta} f`` on all cells meeting the region's bounding box."""
    p = GridPlacement(eps, tuple(np.asarray(zeta, dtype=float)))
    lo, hi = _region_box(region)
    cubes, tags = enumerate_many(p, lo, hi)
    return project_chunked(f, p, cubes, tags, region)


def project_chunked(f: SbvField, placement: GridPlacement, cubes: np.ndarray, tags: np.ndarray, region=None,
                    chunk: int = 400_000) -> PwAffineFunction:
    """``project_cells`` in blocks of cells, bounding the temporary memory."""
    if len(tags) <= chunk:
        return project_cells(f, placement, cubes, tags, region)
    N = len(tags)
    out = {}
    for i in range(0, N, chunk):
        q = project_cells(f, placement, cubes[i:i + chunk], tags[i:i + chunk], region)
        for name in ("vertices", "u", "s", "G", "c"):
            a = getattr(q, name)
            if name not in out:
                out[name] = np.empty((N,) + a.shape[1:], dtype=a.dtype)
            out[name][i:i + len(a)] = a
        del q
    return PwAffineFunction(placement, cubes, tags, out["vertices"], out["u"], out["s"], out["G"], out["c"], region)


def project_jittered(f: SbvField, eps: float, region, rng: np.random.Generator,
                     zeta=None, attempts: int = MAX_JITTER) -> PwAffineFunction:
    """Projection with re-sampling of the shift on degenerate slices."""
    last = None
    for k in range(attempts):
        z = sample_shift(eps, rng, 2) if (zeta is None or k > 0) else np.asarray(zeta)
        try:
            return project(f, eps, z, region)
        except DegenerateSlice as exc:
            last = exc
    raise DegenerateSlice(f"degenerate slice after {attempts} shifts: {last}", getattr(last, "segment", None))


def shared_edge_mismatch(pw: PwAffineFunction, samples: int = 50) -> float:
    """Largest trace difference between cells sharing an edge (n = 2)."""
    t = (np.arange(samples) + 0.5) / samples
    edges: dict = {}
    worst = 0.0
    for r in range(len(pw)):
        ip = pw.interpolant(r)
        for i, j in _n_pairs(3):
            a, b = pw.vertices[r, i], pw.vertices[r, j]
            key = tuple(sorted([tuple(np.round(a, 12)), tuple(np.round(b, 12))]))
            ta = t if tuple(np.round(a, 12)) == key[0] else 1 - t
            vals = ip.edge_trace(i, j, ta)
            if key in edges:
                worst = max(worst, float(np.abs(edges[key] - vals).max()))
            else:
                edges[key] = vals
    return worst


# ---------------------------------------------------------------------------
# projected functions as fields
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TranslatedField(SbvField):
    """``x -> f(x - shift)``."""

    base: SbvField
    shift: np.ndarray

    def __post_init__(self):
        self.m = self.base.m
        self.shift = np.asarray(self.shift, dtype=float)
        self.interfaces = []

    def eval(self, x):
        return self.base.eval(np.atleast_2d(x) - self.shift)

    def grad(self, x):
        return self.base.grad(np.atleast_2d(x) - self.shift)

    def jump_sum(self, a, b):
        return self.base.jump_sum(np.atleast_2d(a) - self.shift, np.atleast_2d(b) - self.shift)


@dataclass(eq=False)
class SumField(SbvField):
    """``a * f + g`` with ``g`` a smooth map."""

    base: SbvField
    scale: float
    smooth: SmoothMap

    def __post_init__(self):
        self.m = self.base.m
        self.interfaces = []

    def eval(self, x):
        x = np.atleast_2d(x)
        return self.scale * self.base.eval(x) + self.smooth.value(x)

    def grad(self, x):
        x = np.atleast_2d(x)
        return self.scale * self.base.grad(x) + self.smooth.jac(x)

    def jump_sum(self, a, b):
        return self.scale * self.base.jump_sum(a, b)


@dataclass(eq=False)
class PwAffineField(SbvField):
    """A projected function seen as an input field.

    The cumulated jump along a segment is the increment minus the exact
    integral of the piecewise-constant gradient along it.
    """

    pw: PwAffineFunction

    def __post_init__(self):
        self.m = self.pw.m
        self.interfaces = []

    def eval(self, x):
        return self.pw.eval(x)

    def grad(self, x):
        return self.pw.grad(x)

    def _lattice_breaks(self, a, b) -> list[float]:
        p = self.pw.placement
        la, lb = p.to_lattice(a), p.to_lattice(b)
        ts = []
        for w in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([1.0, -1.0])):
            ga, gb = la @ w, lb @ w
            if abs(gb - ga) < 1e-14:
                continue
            k0, k1 = math.floor(min(ga, gb)) + 1, math.ceil(max(ga, gb)) - 1
            for k in range(k0, k1 + 1):
                t = (k - ga) / (gb - ga)
                if 1e-13 < t < 1 - 1e-13:
                    ts.append(t)
        return ts

    def _xi(self, a, b) -> np.ndarray:
        d = b - a
        ts = sorted(set([0.0, 1.0] + self._lattice_breaks(a, b)))
        total = np.zeros(self.m)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            xm = a + 0.5 * (t0 + t1) * d
            r = self.pw.rows(xm[None])[0]
            B, bb = self.pw.bary
            l0 = B[r] @ (a + t0 * d) + bb[r]
            l1 = B[r] @ (a + t1 * d) + bb[r]
            sub = [t0, t1]
            for i, j in _n_pairs(3):
                g0, g1 = l0[i] - l0[j], l1[i] - l1[j]
                if g0 * g1 < 0:
                    sub.append(t0 + (t1 - t0) * g0 / (g0 - g1))
            sub = sorted(sub)
            for s0, s1 in zip(sub[:-1], sub[1:]):
                if s1 - s0 <= 0:
                    continue
                lam = B[r] @ (a + 0.5 * (s0 + s1) * d) + bb[r]
                jsub = int(np.argmax(lam >= lam.max() - BARY_TOL))
                total += (s1 - s0) * (self.pw.G[r, jsub] @ d)
        return total

    def jump_sum(self, a, b):
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        inc = self.eval(b) - self.eval(a)
        xi = np.array([self._xi(a[k], b[k]) for k in range(len(a))])
        return inc - xi


def idempotence_check(pw: PwAffineFunction) -> PwAffineFunction:
    """Project ``pw`` again on its own cells."""
    return project_cells(PwAffineField(pw), pw.placement, pw.cubes, pw.tags, pw.region)


def cell_data_distance(p: PwAffineFunction, q: PwAffineFunction) -> float:
    if len(p) != len(q) or np.any(p.cubes != q.cubes) or np.any(p.tags != q.tags):
        return math.inf
    return float(max(np.abs(p.u - q.u).max(initial=0.0), np.abs(p.s - q.s).max(initial=0.0)))


# ---------------------------------------------------------------------------
# region quadrature on projected functions
# ---------------------------------------------------------------------------


def subcell_quads(pw: PwAffineFunction) -> np.ndarray:
    """``(N, 3, 4, 2)`` quadrilaterals ``[A_j, mid_ji, centroid, mid_jk]`` (n = 2)."""
    v = pw.vertices
    cen = v.mean(axis=1)
    out = np.empty((len(v), 3, 4, 2))
    for j in range(3):
        i, k = [t for t in range(3) if t != j]
        out[:, j, 0] = v[:, j]
        out[:, j, 1] = 0.5 * (v[:, j] + v[:, i])
        out[:, j, 2] = cen
        out[:, j, 3] = 0.5 * (v[:, j] + v[:, k])
    return out


def subcell_areas_in(pw: PwAffineFunction, region) -> np.ndarray:
    """``(N, 3)`` areas of the subcells intersected with a polygonal region."""
    poly = as_polygon(region)
    quads = subcell_quads(pw)
    full_area = np.repeat(pw.subcell_volumes()[:, None], 3, axis=1)
    v = pw.vertices
    inside = shapely.contains_xy(poly, v[..., 0].ravel(), v[..., 1].ravel()).reshape(len(v), 3)
    cen = v.mean(axis=1)
    diam = np.max(np.linalg.norm(v - cen[:, None], axis=2), axis=1)
    dist = shapely.distance(poly.boundary, shapely.points(cen))
    ok_in = np.all(inside, axis=1) & (dist > diam)
    out = np.where(ok_in[:, None], full_area, 0.0)
    far_out = ~shapely.contains_xy(poly, cen[:, 0], cen[:, 1]) & (dist > diam)
    todo = np.flatnonzero(~ok_in & ~far_out)
    if len(todo):
        polys = shapely.polygons(quads[todo].reshape(-1, 4, 2))
        areas = shapely.area(shapely.intersection(polys, poly)).reshape(len(todo), 3)
        out[todo] = areas
    return out


def refined_points(pw: PwAffineFunction, r: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature points inside subcells: each subcell quad is cut into two
    triangles and each triangle into ``r^2`` congruent pieces (centroid rule).

    Returns ``(points (N, 3, Q, 2), weights (N, 3, Q), subcell index (3,))``.
    """
    quads = subcell_quads(pw)
    tris = [(0, 1, 2), (0, 2, 3)]
    bary = []
    for a in range(r):
        for b in range(r - a):
            bary.append(((a + 1 / 3) / r, (b + 1 / 3) / r))
            if a + b < r - 1:
                bary.append(((a + 2 / 3) / r, (b + 2 / 3) / r))
    bary = np.array(bary)  # coordinates along edges 1 and 2 of a triangle
    pts, wts = [], []
    for (i0, i1, i2) in tris:
        P0, P1, P2 = quads[:, :, i0], quads[:, :, i1], quads[:, :, i2]
        area = 0.5 * np.abs(
            (P1[..., 0] - P0[..., 0]) * (P2[..., 1] - P0[..., 1]) - (P1[..., 1] - P0[..., 1]) * (P2[..., 0] - P0[..., 0])
        )
        q = P0[:, :, None, :] + bary[None, None, :, 0, None] * (P1 - P0)[:, :, None, :] + bary[None, None, :, 1, None] * (P2 - P0)[:, :, None, :]
        pts.append(q)
        wts.append(np.repeat((area / len(bary))[:, :, None], len(bary), axis=2))
    return np.concatenate(pts, axis=2), np.concatenate(wts, axis=2), np.arange(3)


def l1_distance(f: SbvField, pw: PwAffineFunction, region, r: int = 2) -> float:
    """``int_region |pw - f|`` with a refined centroid rule on every subcell."""
    poly = as_polygon(region)
    pts, wts, _ = refined_points(pw, r)
    N, J, Q, _ = pts.shape
    G = pw.G[:, :, None]  # (N, 3, 1, m, 2)
    vals = np.einsum("njqmd,njqd->njqm", np.broadcast_to(G, (N, J, Q) + G.shape[-2:]), pts) + pw.c[:, :, None, :]
    flat = pts.reshape(-1, 2)
    inside = shapely.contains_xy(poly, flat[:, 0], flat[:, 1])
    diff = np.zeros(len(flat))
    idx = np.flatnonzero(inside)
    fv = f.eval(flat[idx])
    diff[idx] = np.linalg.norm(vals.reshape(-1, pw.m)[idx] - fv, axis=1)
    return float((diff * wts.ravel()).sum())


# ---------------------------------------------------------------------------
# averaged bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundsReport:
    eps: float
    n_zeta: int
    bulk_lhs: float
    bulk_rhs: float
    surface_lhs: float
    surface_rhs: float
    area_lhs: float
    area_rhs: float
    l1_lhs: float
    l1_rhs: float

    @staticmethod
    def _ratio(a, b):
        if b == 0:
            return 0.0 if a <= 1e-10 else math.inf
        return a / b

    @property
    def bulk_ratio(self):
        return self._ratio(self.bulk_lhs, self.bulk_rhs)

    @property
    def surface_ratio(self):
        return self._ratio(self.surface_lhs, self.surface_rhs)

    @property
    def area_ratio(self):
        return self._ratio(self.area_lhs, self.area_rhs)

    @property
    def l1_ratio(self):
        return self._ratio(self.l1_lhs, self.l1_rhs)


def averaged_bounds_report(f: SbvField, eps: float, n_zeta: int, eta, g0, region,
                           rng: np.random.Generator, p: float = 2.0, c_star: float | None = None,
                           l1_refine: int = 2) -> BoundsReport:
    """Shift-averaged left-hand sides of the projection estimates and their right-hand sides.

    Left-hand sides are integrals over ``region``; right-hand sides are taken
    over ``region`` inflated by ``c_star * eps``.
    """
    from . import energy

    if n_zeta < 16:
        raise ValueError("need at least 16 shifts")
    c_star = 1 + math.sqrt(2) if c_star is None else c_star
    poly = as_polygon(region)
    big = poly.buffer(c_star * eps, join_style="mitre")
    eta = np.asarray(eta, dtype=float).reshape(f.m, 2)
    bulk, surf, area, l1 = [], [], [], []
    for _ in range(n_zeta):
        pw = project_jittered(f, eps, big, rng)
        bulk.append(energy.pw_bulk_energy(pw, energy.BulkDensity("power", p), poly, eta=eta))
        faces = pw.jump_faces(poly)
        surf.append(energy.faces_g0_energy(faces, g0))
        area.append(faces.total_length())
        l1.append(l1_distance(f, pw, poly, l1_refine) / eps)
    bulk_rhs = energy.field_bulk_energy(f, energy.BulkDensity("power", p), big, eta=eta)
    from .field import g0_jump_energy, jump_set_length, jump_variation

    surface_rhs = g0_jump_energy(f, g0, big)
    area_rhs = jump_set_length(f, big)
    tv = energy.field_bulk_energy(f, energy.BulkDensity("power", 1.0), big) + jump_variation(f, big)
    return BoundsReport(eps, n_zeta, float(np.mean(bulk)), bulk_rhs, float(np.mean(surf)), surface_rhs,
                        float(np.mean(area)), area_rhs, float(np.mean(l1)), tv)
