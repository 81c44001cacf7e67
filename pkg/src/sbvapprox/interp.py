"""Discontinuous piecewise-affine interpolant on a single simplex.

Given vertex values ``u_i`` and antisymmetric edge jumps ``s_ij`` the
interpolant is affine on each barycentric subcell ``T_j`` with

    v_j(x) = u_j + sum_{i != j} lambda_i(x) xi_ji,   xi_ij = u_j - u_i - s_ij,

which equals ``sum_k lambda_k(x) (u_k - s_jk)``.  Indices are 0-based.
The jump on the internal face between ``T_i`` and ``T_j`` is reported as
(value on the ``T_i`` side) minus (value on the ``T_j`` side).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import (
    BARY_TOL,
    GeometryError,
    Simplex,
    barycentric,
    subcell_index,
    subcell_index_from,
)


def _as_values(u, npts: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != npts:
        raise ValueError(f"expected {npts} vertex values, got {u.shape[0]}")
    return u


@dataclass(frozen=True)
class CellData:
    """Vertex values ``u`` with shape ``(n+1, m)`` and edge jumps ``s`` with shape ``(n+1, n+1, m)``."""

    simplex: Simplex
    u: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        k = self.simplex.n + 1
        u = _as_values(self.u, k)
        s = np.asarray(self.s, dtype=float)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.shape != (k, k, u.shape[1]):
            raise ValueError(f"edge jumps must have shape {(k, k, u.shape[1])}, got {s.shape}")
        if not np.allclose(s, -np.swapaxes(s, 0, 1), atol=1e-12, rtol=0):
            raise ValueError("edge jumps must be antisymmetric")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_pairs(cls, simplex: Simplex, u, pairs: dict | None = None) -> "CellData":
        """Build from a dict ``{(i, j): s_ij}``; the antisymmetric partner is implied."""
        k = simplex.n + 1
        u = _as_values(u, k)
        s = np.zeros((k, k, u.shape[1]))
        for (i, j), val in (pairs or {}).items():
            s[i, j] = val
            s[j, i] = -np.asarray(val, dtype=float)
        return cls(simplex, u, s)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def xi(self) -> np.ndarray:
        """``xi[i, j] = u_j - u_i - s_ij``."""
        return self.u[None, :, :] - self.u[:, None, :] - self.s

    def __add__(self, other: "CellData") -> "CellData":
        return CellData(self.simplex, self.u + other.u, self.s + other.s)

    def scale(self, a: float) -> "CellData":
        return CellData(self.simplex, a * self.u, a * self.s)


def bary_affine(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine maps ``lambda(x) = B x + b`` for a batch of simplexes.

    ``vertices`` has shape ``(N, n+1, n)``; returns ``B (N, n+1, n)`` and ``b (N, n+1)``.
    """
    v = np.asarray(vertices, dtype=float)
    e = np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)  # (N, n, n) columns A_i - A_0
    inv = np.linalg.inv(e)  # rows give lambda_1..n gradients
    B = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    b = -np.einsum("nkd,nd->nk", B, v[:, 0, :])
    b[:, 0] += 1.0
    return B, b


def batch_coefficients(vertices, u, s) -> tuple[np.ndarray, np.ndarray]:
    """Subcell gradients ``G (N, n+1, m, n)`` and offsets ``c (N, n+1, m)``.

    ``u`` has shape ``(N, n+1, m)``, ``s`` shape ``(N, n+1, n+1, m)``.  The
    affine piece on subcell ``j`` is ``x -> G[:, j] @ x + c[:, j]``.
    """
    B, b = bary_affine(vertices)
    w = u[:, None, :, :] - s  # w[N, j, k] = u_k - s_jk
    G = np.einsum("njkm,nkd->njmd", w, B)
    c = np.einsum("njkm,nk->njm", w, b)
    return G, c


@dataclass(frozen=True)
class CellInterpolant:
    """Affine pieces ``v_j(x) = G[j] @ x + c[j]`` on the subcells of one simplex."""

    data: CellData
    G: np.ndarray
    c: np.ndarray

    @property
    def simplex(self) -> Simplex:
        return self.data.simplex

    def piece(self, j: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.G[j].T + self.c[j]

    def _check_inside(self, lam: np.ndarray) -> None:
        if np.any(lam < -BARY_TOL * 1e3):
            raise GeometryError("point outside simplex")

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        lam = np.atleast_2d(barycentric(self.simplex, pts))
        self._check_inside(lam)
        j = np.atleast_1d(subcell_index(lam))
        out = np.einsum("kmd,kd->km", self.G[j], pts) + self.c[j]
        return out[0] if single else out

    def eval_from(self, x, toward) -> np.ndarray:
        """One-sided value at ``x``: the limit when approaching from ``toward``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        tw = np.broadcast_to(np.asarray(toward, dtype=float), pts.shape)
        lam = np.atleast_2d(barycentric(self.simplex, pts))
        self._check_inside(lam)
        d = np.atleast_2d(barycentric(self.simplex, tw)) - lam
        j = subcell_index_from(lam, d)
        out = np.einsum("kmd,kd->km", self.G[j], pts) + self.c[j]
        return out[0] if single else out

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lam = barycentric(self.simplex, x)
        self._check_inside(np.atleast_2d(lam))
        return self.G[subcell_index(lam)]

    def edge_trace(self, i: int, j: int, t) -> np.ndarray:
        """Trace along ``A_i + t (A_j - A_i)``.

        For ``i < j`` this is ``u_i + t xi_ij + s_ij [t > 1/2]``; for ``i > j``
        the same edge is read backwards, so the midpoint keeps the value of the
        lower-index subcell.
        """
        if i == j:
            raise ValueError("edge needs two distinct vertices")
        t = np.asarray(t, dtype=float)
        if i > j:
            return self.edge_trace(j, i, 1.0 - t)
        d = self.data
        tt = t[..., None]
        return d.u[i] + tt * d.xi[i, j] + d.s[i, j] * (tt > 0.5)

    def face_jump(self, i: int, j: int, lam) -> np.ndarray:
        """Jump ``v_i - v_j`` at barycentric points on the face between ``T_i`` and ``T_j``."""
        lam = np.asarray(lam, dtype=float)
        single = lam.ndim == 1
        L = np.atleast_2d(lam)
        top = L.max(axis=1)
        on = (np.abs(L[:, i] - L[:, j]) <= 1e-9) & (L[:, i] >= top - 1e-9)
        if not np.all(on):
            raise GeometryError("barycentric point not on the requested face")
        s = self.data.s
        out = L @ (s[j] - s[i])
        return out[0] if single else out

    def internal_faces(self) -> list[tuple[int, int]]:
        k = self.simplex.n + 1
        return [(i, j) for i in range(k) for j in range(i + 1, k)]


def build_interpolant(d: CellData) -> CellInterpolant:
    G, c = batch_coefficients(d.simplex.vertices[None], d.u[None], d.s[None])
    return CellInterpolant(d, G[0], c[0])


def jump_bound(d: CellData) -> float:
    """``3 * (sum_{i<j} |s_ij|^2)^{1/2}``."""
    k = d.simplex.n + 1
    iu = np.triu_indices(k, 1)
    return 3.0 * float(np.sqrt((d.s[iu] ** 2).sum()))


def gradient_scale(s: Simplex) -> float:
    """``diam(T)^{n-1} / |T|``, the geometric factor of the gradient estimate."""
    return s.diameter ** (s.n - 1) / s.volume
