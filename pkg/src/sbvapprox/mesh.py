"""Periodic reference triangulation, placements, point location and subcells.

The reference partition is the Freudenthal (Kuhn) decomposition of the unit
cube into ``n!`` simplexes, reflected along every axis so that the pattern
repeats with period 2. A placed cell is ``zeta + eps * cell``.

Cells are identified by ``(cube, tag)`` where ``cube`` is the integer corner of
the unit lattice cube holding the cell and ``tag`` indexes the coordinate
ordering (permutation) in lexicographic order.  Ties on shared boundaries are
resolved toward the lowest id (lexicographic on ``(cube, tag)``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BARY_TOL = 1e-12
CONTAIN_TOL = 1e-12


class GeometryError(ValueError):
    """Raised on degenerate simplexes or points outside a simplex."""


# ---------------------------------------------------------------------------
# single simplexes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Simplex:
    """An n-simplex given by its ``n+1`` ordered vertices (rows)."""

    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] + 1:
            raise GeometryError(f"expected (n+1, n) vertex array, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        diam = self.diameter
        if diam == 0.0 or self.volume <= 1e-13 * diam**self.n:
            raise GeometryError("degenerate simplex")

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def edge_matrix(self) -> np.ndarray:
        """Columns ``A_i - A_0`` for ``i = 1..n``."""
        return (self.vertices[1:] - self.vertices[0]).T

    @property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.edge_matrix))) / math.factorial(self.n)

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def boundary_measure(self) -> float:
        """Sum of the (n-1)-measures of the facets."""
        total = 0.0
        for i in range(self.n + 1):
            facet = np.delete(self.vertices, i, axis=0)
            total += _simplex_measure(facet)
        return total


def _simplex_measure(points: np.ndarray) -> float:
    """k-dimensional measure of a k-simplex embedded in R^d (k+1 points)."""
    k = points.shape[0] - 1
    if k == 0:
        return 1.0
    e = points[1:] - points[0]
    gram = e @ e.T
    return math.sqrt(max(float(np.linalg.det(gram)), 0.0)) / math.factorial(k)


@dataclass(frozen=True)
class BaryCoords:
    """Barycentric coordinates; entries sum to one."""

    lam: np.ndarray

    def __post_init__(self) -> None:
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 1 or abs(lam.sum() - 1.0) > 1e-9:
            raise GeometryError("barycentric coordinates must sum to 1")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    def inside(self, tol: float = BARY_TOL) -> bool:
        return bool(np.all(self.lam >= -tol))


def barycentric(s: Simplex, x) -> np.ndarray:
    """Barycentric coordinates of ``x`` (shape ``(n,)`` or ``(k, n)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    rest = np.linalg.solve(s.edge_matrix, (pts - s.vertices[0]).T).T
    lam = np.concatenate([1.0 - rest.sum(axis=1, keepdims=True), rest], axis=1)
    return lam[0] if single else lam


def contains(s: Simplex, x, tol: float = BARY_TOL) -> np.ndarray | bool:
    lam = barycentric(s, x)
    res = np.all(lam >= -tol, axis=-1)
    return bool(res) if np.ndim(res) == 0 else res


def subcell_index(lam, tol: float = BARY_TOL) -> np.ndarray | int:
    """Index of the largest barycentric coordinate, ties to the lowest index."""
    lam = np.asarray(getattr(lam, "lam", lam), dtype=float)
    top = lam.max(axis=-1, keepdims=True)
    idx = np.argmax(lam >= top - tol, axis=-1)
    return int(idx) if np.ndim(idx) == 0 else idx


def subcell_index_from(lam, direction, tol: float = BARY_TOL) -> np.ndarray:
    """Subcell reached from ``lam`` when moving infinitesimally along ``direction``.

    ``direction`` is a barycentric displacement (entries sum to zero). Among
    the maximal coordinates the one growing fastest wins, then the lowest.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    d = np.atleast_2d(np.asarray(direction, dtype=float))
    top = lam.max(axis=1, keepdims=True)
    cand = lam >= top - tol
    dd = np.where(cand, d, -np.inf)
    best = dd.max(axis=1, keepdims=True)
    scale = np.abs(d).max(axis=1, keepdims=True) + 1.0
    cand2 = cand & (dd >= best - tol * scale)
    return np.argmax(cand2, axis=1)


# ---------------------------------------------------------------------------
# reference partition and placements
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


@lru_cache(maxsize=None)
def _local_vertices(n: int) -> np.ndarray:
    """(n!, n+1, n) local 0/1 vertices of each Freudenthal simplex."""
    perms = _perms(n)
    out = np.zeros((len(perms), n + 1, n), dtype=np.int64)
    for t, p in enumerate(perms):
        for k in range(1, n + 1):
            out[t, k] = out[t, k - 1]
            out[t, k, p[k - 1]] = 1
    return out


@lru_cache(maxsize=None)
def _perm_lookup(n: int) -> dict:
    return {tuple(p): i for i, p in enumerate(_perms(n))}


@dataclass(frozen=True)
class ReferencePartition:
    """Reflected Freudenthal partition of R^n with period 2."""

    n: int = 2

    @property
    def cells_per_cube(self) -> int:
        return math.factorial(self.n)

    @property
    def permutations(self) -> np.ndarray:
        return _perms(self.n)

    def cell_vertices(self, cubes, tags) -> np.ndarray:
        """Integer lattice vertices, shape ``(N, n+1, n)``."""
        return cell_vertices_int(np.asarray(cubes), np.asarray(tags), self.n)

    def reference_volume(self) -> float:
        return 1.0 / math.factorial(self.n)


def cell_vertices_int(cubes: np.ndarray, tags: np.ndarray, n: int) -> np.ndarray:
    cubes = np.asarray(cubes, dtype=np.int64).reshape(-1, n)
    tags = np.asarray(tags, dtype=np.int64).reshape(-1)
    loc = _local_vertices(n)[tags]  # (N, n+1, n)
    odd = (cubes % 2 == 1)[:, None, :]
    return cubes[:, None, :] + np.where(odd, 1 - loc, loc)


@dataclass(frozen=True, order=True)
class CellId:
    cube: tuple
    tag: int


@dataclass(frozen=True)
class GridPlacement:
    """Scaled and shifted copy ``zeta + eps * T0`` of the reference partition."""

    eps: float
    zeta: tuple = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise GeometryError("eps must be positive")
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))

    @property
    def n(self) -> int:
        return len(self.zeta)

    @property
    def zeta_arr(self) -> np.ndarray:
        return np.array(self.zeta)

    def to_lattice(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.zeta_arr) / self.eps

    def to_space(self, k) -> np.ndarray:
        return self.zeta_arr + self.eps * np.asarray(k, dtype=float)

    def cell_vertices(self, cubes, tags) -> np.ndarray:
        return self.to_space(cell_vertices_int(cubes, tags, self.n))

    def simplex(self, cell: CellId) -> Simplex:
        v = self.cell_vertices(np.array([cell.cube]), np.array([cell.tag]))[0]
        return Simplex(v)


def _lattice_floor_low(y: np.ndarray) -> np.ndarray:
    """Floor, but points within tolerance of an integer go to the lower cube."""
    r = np.round(y)
    near = np.abs(y - r) <= CONTAIN_TOL * np.maximum(1.0, np.abs(y))
    return np.where(near, r - 1, np.floor(y)).astype(np.int64)


def locate_many(p: GridPlacement, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised point location: returns ``(cubes (k, n), tags (k,))``."""
    y = np.atleast_2d(p.to_lattice(x))
    cubes = _lattice_floor_low(y)
    local = y - cubes
    local = np.where(cubes % 2 == 1, 1.0 - local, local)
    local = np.round(local, 12)
    order = np.argsort(-local, axis=1, kind="stable")
    n = p.n
    if n == 2:
        tags = order[:, 0].astype(np.int64)
    else:
        lut = _perm_lookup(n)
        tags = np.array([lut[tuple(o)] for o in order], dtype=np.int64)
    return cubes, tags


def locate_cell(p: GridPlacement, x) -> CellId:
    cubes, tags = locate_many(p, np.asarray(x, dtype=float)[None, :])
    return CellId(tuple(int(c) for c in cubes[0]), int(tags[0]))


def enumerate_many(p: GridPlacement, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Cells meeting the box ``[lo, hi]``, sorted by id.

    For a box with positive volume a cell is reported when its overlap with the
    box has positive measure; for a degenerate box (zero extent along some
    axis) a cell is reported when its closure meets the box.
    """
    n = p.n
    a = p.to_lattice(np.asarray(lo, dtype=float))
    b = p.to_lattice(np.asarray(hi, dtype=float))
    if np.any(b < a):
        raise GeometryError("box with hi < lo")
    degenerate = bool(np.any(b - a <= CONTAIN_TOL))
    tol = 1e-12
    if degenerate:
        c_lo = np.floor(a - tol).astype(np.int64)
        c_hi = np.floor(b + tol).astype(np.int64)
    else:
        c_lo = np.floor(a).astype(np.int64)
        c_hi = np.ceil(b).astype(np.int64) - 1
    axes = [np.arange(c_lo[i], c_hi[i] + 1) for i in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    perms = _perms(n)
    nt = len(perms)
    cubes = np.repeat(grid, nt, axis=0)
    tags = np.tile(np.arange(nt), len(grid))
    odd = cubes % 2 == 1
    la = np.where(odd, cubes + 1 - b, a - cubes)
    lb = np.where(odd, cubes + 1 - a, b - cubes)
    la = np.maximum(la, 0.0)
    lb = np.minimum(lb, 1.0)
    pm = perms[tags]
    lo_c = np.take_along_axis(la, pm, axis=1)
    hi_c = np.minimum.accumulate(np.take_along_axis(lb, pm, axis=1), axis=1)
    if degenerate:
        ok = np.all(lo_c <= hi_c + tol, axis=1)
    else:
        ok = np.all(lo_c < hi_c - tol, axis=1)
    return cubes[ok], tags[ok]


def enumerate_cells(p: GridPlacement, lo, hi) -> list[CellId]:
    cubes, tags = enumerate_many(p, lo, hi)
    return [CellId(tuple(int(c) for c in cu), int(t)) for cu, t in zip(cubes, tags)]


def sample_shift(eps: float, rng: np.random.Generator, n: int = 2) -> np.ndarray:
    """Uniform sample from the open ball of radius ``eps``."""
    d = rng.normal(size=n)
    d /= np.linalg.norm(d)
    return eps * rng.uniform() ** (1.0 / n) * d


# ---------------------------------------------------------------------------
# barycentric subcells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubcellGeometry:
    """Subcells ``T_j = {lambda_j maximal}`` of a simplex.

    In the plane ``polygons[j]`` is the quadrilateral
    ``[A_j, mid(A_j, A_i), centroid, mid(A_j, A_k)]`` and ``faces[(i, j)]`` the
    internal segment from ``mid(A_i, A_j)`` to the centroid. In 3D the faces are
    planar quadrilaterals and the polygons entry is empty.
    """

    parent: Simplex
    polygons: tuple
    faces: dict

    def volumes(self) -> np.ndarray:
        if self.parent.n == 2:
            return np.array([shoelace(q) for q in self.polygons])
        return np.full(self.parent.n + 1, self.parent.volume / (self.parent.n + 1))

    def face_measure(self, i: int, j: int) -> float:
        pts = self.faces[(min(i, j), max(i, j))]
        if len(pts) == 2:
            return float(np.linalg.norm(pts[1] - pts[0]))
        return planar_polygon_area(pts)

    def face_measure_total(self) -> float:
        """Sum over unordered pairs of internal face measures."""
        return sum(self.face_measure(i, j) for (i, j) in self.faces)

    def contains(self, j: int, x) -> np.ndarray:
        lam = barycentric(self.parent, x)
        return (subcell_index(lam) == j) & np.all(lam >= -BARY_TOL, axis=-1)


def shoelace(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def planar_polygon_area(pts: np.ndarray) -> float:
    """Area of a planar polygon in R^3 (vertices in cyclic order)."""
    c = pts.mean(axis=0)
    total = np.zeros(3)
    for k in range(len(pts)):
        total += np.cross(pts[k] - c, pts[(k + 1) % len(pts)] - c)
    return 0.5 * float(np.linalg.norm(total))


def subcell_geometry(s: Simplex) -> SubcellGeometry:
    v = s.vertices
    n = s.n
    cen = v.mean(axis=0)
    faces: dict = {}
    polys: list = []
    if n == 2:
        for j in range(3):
            i, k = [t for t in range(3) if t != j]
            polys.append(np.array([v[j], 0.5 * (v[j] + v[i]), cen, 0.5 * (v[j] + v[k])]))
        for i, j in itertools.combinations(range(3), 2):
            faces[(i, j)] = np.array([0.5 * (v[i] + v[j]), cen])
    elif n == 3:
        for i, j in itertools.combinations(range(4), 2):
            k, l = [t for t in range(4) if t not in (i, j)]
            mid = 0.5 * (v[i] + v[j])
            fk = (v[i] + v[j] + v[k]) / 3.0
            fl = (v[i] + v[j] + v[l]) / 3.0
            faces[(i, j)] = np.array([mid, fk, cen, fl])
    else:
        raise GeometryError("explicit subcell geometry only for n = 2, 3")
    return SubcellGeometry(s, tuple(polys), faces)


def monte_carlo_subcell_volumes(
    s: Simplex, samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo volumes of the subcells and their standard errors."""
    n = s.n
    lam = rng.dirichlet(np.ones(n + 1), size=samples)
    j = subcell_index(lam)
    frac = np.bincount(j, minlength=n + 1) / samples
    se = np.sqrt(frac * (1 - frac) / samples)
    return frac * s.volume, se * s.volume


def monte_carlo_face_measure(
    s: Simplex, i: int, j: int, samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte Carlo estimate of the internal face between ``T_i`` and ``T_j`` (n = 3).

    The face lies in the plane ``lambda_i = lambda_j``; its section of the
    tetrahedron is the triangle ``conv(mid(A_i, A_j), A_k, A_l)``.  The estimate
    is the area of that triangle times the fraction of uniform samples with
    ``lambda_i >= lambda_k, lambda_l``.
    """
    if s.n != 3:
        raise GeometryError("Monte Carlo face estimate implemented for n = 3")
    v = s.vertices
    k, l = [t for t in range(4) if t not in (i, j)]
    tri = np.array([0.5 * (v[i] + v[j]), v[k], v[l]])
    area = _simplex_measure(tri)
    w = rng.dirichlet(np.ones(3), size=samples)
    lam_i = 0.5 * w[:, 0]
    hit = (lam_i >= w[:, 1]) & (lam_i >= w[:, 2])
    frac = hit.mean()
    se = math.sqrt(frac * (1 - frac) / samples)
    return area * frac, area * se
