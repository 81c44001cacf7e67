"""Piecewise-smooth fields with explicit jump interfaces, slicing and moduli.

A field is evaluated off its interfaces, knows its classical gradient there, and
can report the cumulated jump along any segment.  Interfaces are parametric
curves with a unit normal pointing to the ``+`` side and a smooth amplitude
``u+ - u-`` defined on a neighbourhood of the curve.

All point arguments are arrays of shape ``(k, 2)``; values come back as
``(k, m)`` and gradients as ``(k, m, 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import shapely
from scipy import integrate

TANGENCY_TOL = 1e-8
ENDPOINT_TOL = 1e-12


class DegenerateSlice(ArithmeticError):
    """A segment touches an interface tangentially or ends on it."""

    def __init__(self, msg: str, segment: tuple | None = None):
        super().__init__(msg)
        self.segment = segment


def _pts(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# smooth maps (backgrounds and amplitudes)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothMap:
    """A smooth map R^2 -> R^m with its Jacobian."""

    value: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    m: int = 1
    c2_bound: float = 0.0  # bound on second derivatives, used by quadrature checks

    def __call__(self, x) -> np.ndarray:
        return self.value(_pts(x))

    def __add__(self, other: "SmoothMap") -> "SmoothMap":
        return SmoothMap(
            lambda x: self.value(x) + other.value(x),
            lambda x: self.jac(x) + other.jac(x),
            self.m,
            self.c2_bound + other.c2_bound,
        )

    def scaled(self, a: float) -> "SmoothMap":
        return SmoothMap(lambda x: a * self.value(x), lambda x: a * self.jac(x), self.m, abs(a) * self.c2_bound)


def constant_map(c) -> SmoothMap:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    m = c.size
    return SmoothMap(
        lambda x: np.broadcast_to(c, (len(x), m)).copy(),
        lambda x: np.zeros((len(x), m, 2)),
        m,
    )


def affine_map(A, b) -> SmoothMap:
    """``x -> A x + b`` with ``A`` of shape ``(m, 2)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m = A.shape[0]
    return SmoothMap(
        lambda x: x @ A.T + b,
        lambda x: np.broadcast_to(A, (len(x), m, 2)).copy(),
        m,
    )


def zero_map(m: int = 1) -> SmoothMap:
    return constant_map(np.zeros(m))


def wave_map(amp: float = 0.2, kx: float = 1.0, ky: float = 1.0) -> SmoothMap:
    """Scalar ``amp * sin(pi kx x) * cos(pi ky y)``."""
    def val(x):
        return (amp * np.sin(np.pi * kx * x[:, 0]) * np.cos(np.pi * ky * x[:, 1]))[:, None]

    def jac(x):
        sx, cx = np.sin(np.pi * kx * x[:, 0]), np.cos(np.pi * kx * x[:, 0])
        sy, cy = np.sin(np.pi * ky * x[:, 1]), np.cos(np.pi * ky * x[:, 1])
        g = np.stack([amp * np.pi * kx * cx * cy, -amp * np.pi * ky * sx * sy], axis=-1)
        return g[:, None, :]

    return SmoothMap(val, jac, 1, amp * np.pi**2 * max(kx, ky) ** 2)


def quadratic_map(a: float, b: float, c: float = 0.0) -> SmoothMap:
    """Scalar ``a x^2 + b y^2 + c x y``."""
    def val(x):
        return (a * x[:, 0] ** 2 + b * x[:, 1] ** 2 + c * x[:, 0] * x[:, 1])[:, None]

    def jac(x):
        g = np.stack([2 * a * x[:, 0] + c * x[:, 1], 2 * b * x[:, 1] + c * x[:, 0]], axis=-1)
        return g[:, None, :]

    return SmoothMap(val, jac, 1, 2 * max(abs(a), abs(b), abs(c)))


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


def _left_normal(d: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.stack([-d[..., 1], d[..., 0]], axis=-1) / nrm


def _check_transversal(nu: np.ndarray, d: np.ndarray, seg: np.ndarray) -> None:
    dn = np.linalg.norm(d, axis=1)
    ok = dn > 0
    cosang = np.abs(np.einsum("kd,kd->k", nu, d)) / np.where(ok, dn, 1.0)
    bad = ok & (cosang < TANGENCY_TOL)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise DegenerateSlice("tangential crossing", (int(seg[k]),))


class Curve:
    """Parametric C^1 curve ``tau -> point(tau)`` on ``[tau0, tau1]``.

    The unit normal is the tangent rotated by +90 degrees.
    """

    tau_range: tuple = (-math.inf, math.inf)
    closed: bool = False

    def point(self, tau) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, tau) -> np.ndarray:
        raise NotImplementedError

    def normal(self, tau) -> np.ndarray:
        return _left_normal(self.deriv(tau))

    def param_of(self, x) -> np.ndarray:
        raise NotImplementedError

    def level(self, x) -> np.ndarray | None:
        """Signed function positive on the ``+`` side, if globally defined."""
        return None

    def crossings(self, a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Crossings of segments ``a[k] -> b[k]`` with the curve.

        Returns ``(seg, t, nu)`` where ``t`` lies in the closed interval
        ``[0, 1]`` and ``nu`` is the curve normal at the crossing.
        """
        raise NotImplementedError

    def tau_box(self, lo, hi) -> tuple[float, float] | None:
        """A finite parameter interval covering the part of the curve in a box."""
        return self.tau_range

    def breaks(self) -> list[float]:
        return []


def _box_slab(p: np.ndarray, d: np.ndarray, lo, hi) -> tuple[float, float] | None:
    t0, t1 = -math.inf, math.inf
    for i in range(2):
        if abs(d[i]) < 1e-300:
            if p[i] < lo[i] or p[i] > hi[i]:
                return None
            continue
        ta, tb = (lo[i] - p[i]) / d[i], (hi[i] - p[i]) / d[i]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    if t0 > t1:
        return None
    return t0, t1


@dataclass(frozen=True, eq=False)
class LineCurve(Curve):
    """Straight line ``p + tau d`` (unit ``d``), optionally restricted to a parameter range."""

    p: tuple
    d: tuple
    tau_range: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        object.__setattr__(self, "d", tuple(d / np.linalg.norm(d)))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))

    @property
    def nu(self) -> np.ndarray:
        return np.array([-self.d[1], self.d[0]])

    def point(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.asarray(self.p) + tau[..., None] * np.asarray(self.d)

    def deriv(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.broadcast_to(np.asarray(self.d), tau.shape + (2,)).copy()

    def param_of(self, x):
        return (_pts(x) - np.asarray(self.p)) @ np.asarray(self.d)

    def level(self, x):
        if np.isfinite(self.tau_range[0]) or np.isfinite(self.tau_range[1]):
            return None
        return (_pts(x) - np.asarray(self.p)) @ self.nu

    def crossings(self, a, b):
        a, b = _pts(a), _pts(b)
        nu, p = self.nu, np.asarray(self.p)
        d = b - a
        den = d @ nu
        num = (p - a) @ nu
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        hit = np.isfinite(t) & (t >= -ENDPOINT_TOL) & (t <= 1 + ENDPOINT_TOL)
        if np.isfinite(self.tau_range[0]) or np.isfinite(self.tau_range[1]):
            tau = (a + t[:, None] * d - p) @ np.asarray(self.d)
            hit &= (tau >= self.tau_range[0]) & (tau <= self.tau_range[1])
        seg = np.flatnonzero(hit)
        nus = np.broadcast_to(nu, (len(seg), 2)).copy()
        _check_transversal(nus, d[seg], seg)
        return seg, np.clip(t[seg], 0.0, 1.0), nus

    def tau_box(self, lo, hi):
        r = _box_slab(np.asarray(self.p), np.asarray(self.d), lo, hi)
        if r is None:
            return None
        t0, t1 = max(r[0], self.tau_range[0]), min(r[1], self.tau_range[1])
        return (t0, t1) if t0 <= t1 else None


@dataclass(frozen=True, eq=False)
class CircleCurve(Curve):
    """Counterclockwise circle; the normal points inward, so the disc is the ``+`` side."""

    c: tuple
    r: float
    tau_range: tuple = (0.0, 2 * math.pi)
    closed: bool = True

    def point(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.asarray(self.c) + self.r * np.stack([np.cos(tau), np.sin(tau)], axis=-1)

    def deriv(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.r * np.stack([-np.sin(tau), np.cos(tau)], axis=-1)

    def param_of(self, x):
        q = _pts(x) - np.asarray(self.c)
        return np.mod(np.arctan2(q[:, 1], q[:, 0]), 2 * math.pi)

    def level(self, x):
        return self.r - np.linalg.norm(_pts(x) - np.asarray(self.c), axis=1)

    def crossings(self, a, b):
        a, b = _pts(a), _pts(b)
        d = b - a
        q = a - np.asarray(self.c)
        A = (d * d).sum(1)
        B = 2 * (q * d).sum(1)
        C = (q * q).sum(1) - self.r**2
        disc = B * B - 4 * A * C
        segs, ts = [], []
        ok = (A > 0) & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            # stable quadratic roots
            qq = -0.5 * (B + np.copysign(sq, B))
            r1 = qq / A
            r2 = np.where(qq != 0, C / qq, r1)
        for r in (np.minimum(r1, r2), np.maximum(r1, r2)):
            hit = ok & np.isfinite(r) & (r >= -ENDPOINT_TOL) & (r <= 1 + ENDPOINT_TOL)
            idx = np.flatnonzero(hit)
            segs.append(idx)
            ts.append(r[idx])
        seg = np.concatenate(segs)
        t = np.clip(np.concatenate(ts), 0.0, 1.0)
        if len(seg):
            order = np.lexsort((t, seg))
            seg, t = seg[order], t[order]
            # double root means tangency
            dup = np.flatnonzero((np.diff(seg) == 0) & (np.diff(t) <= 1e-12))
            if len(dup):
                raise DegenerateSlice("tangential crossing", (int(seg[dup[0]]),))
        x = a[seg] + t[:, None] * d[seg]
        nu = np.asarray(self.c) - x
        nu /= np.linalg.norm(nu, axis=1, keepdims=True)
        _check_transversal(nu, d[seg], seg)
        return seg, t, nu


@dataclass(frozen=True, eq=False)
class GraphCurve(Curve):
    """Graph ``y = phi(x)`` over the whole real line; ``+`` side is above.

    ``d2_bound`` bounds ``|phi''|`` and drives the root isolation.
    """

    phi: Callable
    dphi: Callable
    d2_bound: float

    def point(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.stack([tau, self.phi(tau)], axis=-1)

    def deriv(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.stack([np.ones_like(tau), self.dphi(tau)], axis=-1)

    def param_of(self, x):
        return _pts(x)[:, 0].copy()

    def level(self, x):
        x = _pts(x)
        return x[:, 1] - self.phi(x[:, 0])

    def tau_box(self, lo, hi):
        return (float(lo[0]), float(hi[0]))

    def crossings(self, a, b):
        a, b = _pts(a), _pts(b)
        d = b - a
        M = self.d2_bound * d[:, 0] ** 2

        def h(seg, t):
            return a[seg, 1] + t * d[seg, 1] - self.phi(a[seg, 0] + t * d[seg, 0])

        k = len(a)
        seg = np.arange(k)
        t0 = np.zeros(k)
        t1 = np.ones(k)
        h0 = h(seg, t0)
        h1 = h(seg, t1)
        found_seg, found_lo, found_hi, found_hlo = [], [], [], []
        touch_seg, touch_t = [], []
        for _ in range(48):
            if len(seg) == 0:
                break
            L = t1 - t0
            Ms = M[seg]
            # exact endpoint roots are kept as touching points
            dev = Ms * L * L / 8.0
            slope = (h1 - h0) / L
            monotone = np.abs(slope) > Ms * L
            change = np.sign(h0) * np.sign(h1) < 0
            empty = (np.sign(h0) * np.sign(h1) > 0) & (np.minimum(np.abs(h0), np.abs(h1)) > dev)
            mono_empty = monotone & ~change & (h0 != 0) & (h1 != 0)
            root_here = monotone & change
            found_seg.append(seg[root_here])
            found_lo.append(t0[root_here])
            found_hi.append(t1[root_here])
            found_hlo.append(h0[root_here])
            for tv, hv in ((t0, h0), (t1, h1)):
                z = (hv == 0) & monotone
                touch_seg.append(seg[z])
                touch_t.append(tv[z])
            keep = ~(root_here | empty | mono_empty | (monotone & ((h0 == 0) | (h1 == 0))))
            seg, t0, t1, h0, h1 = seg[keep], t0[keep], t1[keep], h0[keep], h1[keep]
            if len(seg) == 0:
                break
            tm = 0.5 * (t0 + t1)
            hm = h(seg, tm)
            seg = np.concatenate([seg, seg])
            t0, t1 = np.concatenate([t0, tm]), np.concatenate([tm, t1])
            h0, h1 = np.concatenate([h0, hm]), np.concatenate([hm, h1])
        if len(seg):
            raise DegenerateSlice("tangential contact with graph", (int(seg[0]),))
        fs = np.concatenate(found_seg)
        lo = np.concatenate(found_lo)
        hi = np.concatenate(found_hi)
        hlo = np.concatenate(found_hlo)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            hm = h(fs, mid)
            same = np.sign(hm) == np.sign(hlo)
            lo = np.where(same, mid, lo)
            hlo = np.where(same, hm, hlo)
            hi = np.where(same, hi, mid)
        t = 0.5 * (lo + hi)
        ts_ = np.concatenate(touch_t) if touch_t else np.zeros(0)
        ss_ = np.concatenate(touch_seg) if touch_seg else np.zeros(0, int)
        seg_all = np.concatenate([fs, ss_]).astype(np.int64)
        t_all = np.concatenate([t, ts_])
        order = np.lexsort((t_all, seg_all))
        seg_all, t_all = seg_all[order], t_all[order]
        if len(seg_all) > 1:
            keep = np.ones(len(seg_all), bool)
            keep[1:] = ~((np.diff(seg_all) == 0) & (np.diff(t_all) <= 1e-13))
            seg_all, t_all = seg_all[keep], t_all[keep]
        x = a[seg_all, 0] + t_all * d[seg_all, 0]
        nu = _left_normal(np.stack([np.ones_like(x), self.dphi(x)], axis=-1))
        _check_transversal(nu, d[seg_all], seg_all)
        return seg_all, t_all, nu


@dataclass(frozen=True, eq=False)
class PolylineCurve(Curve):
    """Polygonal chain through ``points``; parameter ``tau`` runs over ``[0, N-1]``."""

    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim != 2 or len(P) < 2:
            raise ValueError("polyline needs at least two points")
        keep = np.ones(len(P), bool)
        keep[1:] = np.linalg.norm(np.diff(P, axis=0), axis=1) > 0
        P = P[keep]
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "tau_range", (0.0, float(len(P) - 1)))

    def _seg_of(self, tau):
        tau = np.asarray(tau, dtype=float)
        i = np.clip(np.floor(tau).astype(int), 0, len(self.points) - 2)
        return i, tau - i

    def point(self, tau):
        i, f = self._seg_of(tau)
        P = self.points
        return P[i] + f[..., None] * (P[i + 1] - P[i])

    def deriv(self, tau):
        i, _ = self._seg_of(tau)
        P = self.points
        return P[i + 1] - P[i]

    def breaks(self):
        return [float(k) for k in range(1, len(self.points) - 1)]

    def param_of(self, x):
        x = _pts(x)
        P = self.points
        A, B = P[:-1], P[1:]
        D = B - A
        w = np.einsum("ksd,sd->ks", x[:, None, :] - A[None], D) / (D * D).sum(1)
        w = np.clip(w, 0, 1)
        proj = A[None] + w[..., None] * D[None]
        dist = np.linalg.norm(proj - x[:, None, :], axis=2)
        j = np.argmin(dist, axis=1)
        return j + w[np.arange(len(x)), j]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def crossings(self, a, b):
        a, b = _pts(a), _pts(b)
        d = b - a
        P = self.points
        segs, ts, nus = [], [], []
        chunk = max(1, 2_000_000 // max(len(a), 1))
        for s0 in range(0, len(P) - 1, chunk):
            A = P[s0 : min(s0 + chunk, len(P) - 1)]
            E = P[s0 + 1 : min(s0 + chunk, len(P) - 1) + 1] - A
            # solve a + t d = A + w E
            den = d[:, None, 0] * E[None, :, 1] - d[:, None, 1] * E[None, :, 0]
            r = A[None, :, :] - a[:, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (r[..., 0] * E[None, :, 1] - r[..., 1] * E[None, :, 0]) / den
                w = (r[..., 0] * d[:, None, 1] - r[..., 1] * d[:, None, 0]) / den
            hit = (
                np.isfinite(t)
                & (t >= -ENDPOINT_TOL)
                & (t <= 1 + ENDPOINT_TOL)
                & (w >= 0)
                & (w < 1)
            )
            ki, si = np.nonzero(hit)
            segs.append(ki)
            ts.append(t[ki, si])
            nus.append(_left_normal(E[si]))
        seg = np.concatenate(segs)
        t = np.clip(np.concatenate(ts), 0, 1)
        nu = np.concatenate(nus) if nus else np.zeros((0, 2))
        order = np.lexsort((t, seg))
        seg, t, nu = seg[order], t[order], nu[order]
        _check_transversal(nu, d[seg], seg)
        return seg, t, nu


# ---------------------------------------------------------------------------
# interfaces and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Interface:
    """A jump curve with amplitude ``u+ - u-`` given by a smooth map."""

    curve: Curve
    amplitude: SmoothMap
    name: str = ""
    eval_plus: Callable | None = None
    eval_minus: Callable | None = None

    def jump(self, tau) -> np.ndarray:
        return self.amplitude.value(_pts(self.curve.point(np.atleast_1d(tau))))

    def normal(self, tau) -> np.ndarray:
        return self.curve.normal(np.atleast_1d(tau))


class SbvField:
    """Behavioural contract for input fields."""

    m: int = 1
    interfaces: list
    # grad has no jump across interfaces, so bulk quadrature need not split cells
    continuous_gradient = False

    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def eval_precise(self, x) -> np.ndarray:
        return self.eval(x)

    def one_sided(self, k: int, sign: int) -> "SbvField":
        raise NotImplementedError(f"{type(self).__name__} has no one-sided extensions")

    def crossings(self, a, b) -> list[tuple]:
        """Per interface: ``(seg, t, jump, nu)`` arrays for segments ``a -> b``."""
        a, b = _pts(a), _pts(b)
        out = []
        for itf in self.interfaces:
            seg, t, nu = itf.curve.crossings(a, b)
            x = a[seg] + t[:, None] * (b[seg] - a[seg])
            out.append((seg, t, itf.amplitude.value(x) if len(seg) else np.zeros((0, self.m)), nu))
        return out

    def jump_sum(self, a, b) -> np.ndarray:
        """Cumulated signed jump over the open segments ``(a, b)``; shape ``(k, m)``."""
        a, b = _pts(a), _pts(b)
        d = b - a
        out = np.zeros((len(a), self.m))
        for seg, t, jmp, nu in self.crossings(a, b):
            inner = (t > ENDPOINT_TOL) & (t < 1 - ENDPOINT_TOL)
            sgn = np.sign(np.einsum("kd,kd->k", nu, d[seg]))
            np.add.at(out, seg[inner], jmp[inner] * sgn[inner, None])
        # a non-convergent sum is replaced by zero
        out[~np.all(np.isfinite(out), axis=1)] = 0.0
        return out

    def endpoint_on_interface(self, a, b) -> np.ndarray:
        a, b = _pts(a), _pts(b)
        bad = np.zeros(len(a), bool)
        for seg, t, _, _ in self.crossings(a, b):
            e = (t <= ENDPOINT_TOL) | (t >= 1 - ENDPOINT_TOL)
            bad[seg[e]] = True
        return bad


@dataclass(eq=False)
class CompositeField(SbvField):
    """``background + sum_k amplitude_k * [level_k > 0]``.

    Every interface curve must expose a global level function.
    """

    background: SmoothMap
    interfaces: list = field(default_factory=list)
    domain: tuple | None = None  # ((x0, y0), (x1, y1)) if a natural box exists

    def __post_init__(self):
        self.m = self.background.m
        for itf in self.interfaces:
            if itf.curve.level(np.zeros((1, 2))) is None:
                raise ValueError("composite fields need interfaces with a global level function")
            if itf.amplitude.m != self.m:
                raise ValueError("amplitude dimension mismatch")
        wired = []
        for k, itf in enumerate(self.interfaces):
            wired.append(
                replace(
                    itf,
                    eval_plus=(lambda x, k=k: self.one_sided(k, +1).eval(x)),
                    eval_minus=(lambda x, k=k: self.one_sided(k, -1).eval(x)),
                )
            )
        self.interfaces = wired

    def _sides(self, x):
        return [itf.curve.level(x) > 0 for itf in self.interfaces]

    def eval(self, x):
        x = _pts(x)
        out = self.background.value(x).astype(float)
        for itf, side in zip(self.interfaces, self._sides(x)):
            if np.any(side):
                out[side] += itf.amplitude.value(x[side])
        return out

    def grad(self, x):
        x = _pts(x)
        out = self.background.jac(x).astype(float)
        for itf, side in zip(self.interfaces, self._sides(x)):
            if np.any(side):
                out[side] += itf.amplitude.jac(x[side])
        return out

    def one_sided(self, k: int, sign: int) -> "CompositeField":
        itf = self.interfaces[k]
        rest = [replace(i, eval_plus=None, eval_minus=None) for j, i in enumerate(self.interfaces) if j != k]
        bg = self.background + itf.amplitude if sign > 0 else self.background
        return CompositeField(bg, rest, self.domain)


# ---------------------------------------------------------------------------
# closed-form families
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class StackedLines(CompositeField):
    """Horizontal full lines ``y = 1/k`` (k = 1..K) with jumps ``a_k`` upward."""

    continuous_gradient = True

    levels: np.ndarray = None
    amps: np.ndarray = None
    offset: SmoothMap | None = None

    @classmethod
    def build(cls, K: int, amps=None, background: SmoothMap | None = None, domain=None) -> "StackedLines":
        ks = np.arange(1, K + 1)
        amps = ks ** -3.0 if amps is None else np.asarray(amps, dtype=float)
        return cls.from_levels(1.0 / ks, amps, background or zero_map(), domain)

    @classmethod
    def from_levels(cls, levels, amps, background: SmoothMap, domain=None) -> "StackedLines":
        levels = np.asarray(levels, dtype=float)
        amps = np.asarray(amps, dtype=float).reshape(len(levels), -1)
        itfs = [
            Interface(LineCurve((0.0, float(y)), (1.0, 0.0)), constant_map(a), name=f"y={y:g}")
            for y, a in zip(levels, amps)
        ]
        obj = cls(background, itfs, domain, levels, amps)
        return obj

    def __post_init__(self):
        super().__post_init__()
        order = np.argsort(self.levels, kind="stable")
        self._sorted = self.levels[order]
        cs = np.cumsum(self.amps[order], axis=0)
        self._cum = np.vstack([np.zeros((1, self.amps.shape[1])), cs])

    def _cum_below(self, y, strict: bool):
        idx = np.searchsorted(self._sorted, y, side="left" if strict else "right")
        return self._cum[idx]

    def eval(self, x):
        x = _pts(x)
        return self.background.value(x) + self._cum_below(x[:, 1], strict=True)

    def grad(self, x):
        return self.background.jac(_pts(x))

    def jump_sum(self, a, b):
        a, b = _pts(a), _pts(b)
        lo = np.minimum(a[:, 1], b[:, 1])
        hi = np.maximum(a[:, 1], b[:, 1])
        tot = self._cum_below(hi, strict=True) - self._cum_below(lo, strict=False)
        d = b - a
        sgn = np.sign(d[:, 1])
        tangent = np.abs(d[:, 1]) < TANGENCY_TOL * np.linalg.norm(d, axis=1)
        if np.any(tangent):
            on = np.isin(a[tangent, 1], self._sorted)
            if np.any(on):
                raise DegenerateSlice("segment along a jump line", (int(np.flatnonzero(tangent)[0]),))
        return tot * sgn[:, None]

    def one_sided(self, k: int, sign: int) -> "StackedLines":
        keep = np.arange(len(self.levels)) != k
        bg = self.background + constant_map(self.amps[k]) if sign > 0 else self.background
        return StackedLines.from_levels(self.levels[keep], self.amps[keep], bg, self.domain)


@dataclass(eq=False)
class SawtoothField(SbvField):
    """``u(x) = <j x_1> / j`` (fractional part), jumps ``-1/j`` on ``x_1 in Z/j``."""

    j: int
    box: tuple = ((0.0, 0.0), (1.0, 1.0))

    def __post_init__(self):
        self.m = 1
        (x0, y0), (x1, y1) = self.box
        ks = np.arange(math.ceil(x0 * self.j), math.floor(x1 * self.j) + 1)
        amp = constant_map([-1.0 / self.j])
        self.interfaces = [
            Interface(LineCurve((k / self.j, y0), (0.0, 1.0), (0.0, y1 - y0)), amp, name=f"x={k}/{self.j}")
            for k in ks
        ]

    def eval(self, x):
        x = _pts(x)
        t = self.j * x[:, 0]
        return ((t - np.floor(t)) / self.j)[:, None]

    def grad(self, x):
        x = _pts(x)
        g = np.zeros((len(x), 1, 2))
        g[:, 0, 0] = 1.0
        return g

    def jump_sum(self, a, b):
        a, b = _pts(a), _pts(b)
        ta, tb = self.j * a[:, 0], self.j * b[:, 0]
        lo, hi = np.minimum(ta, tb), np.maximum(ta, tb)
        count = np.ceil(hi) - 1 - np.floor(lo)  # integers strictly inside (lo, hi)
        count = np.maximum(count, 0)
        d = b - a
        tangent = np.abs(d[:, 0]) < TANGENCY_TOL * np.linalg.norm(d, axis=1)
        if np.any(tangent & (np.abs(ta - np.round(ta)) < 1e-12)):
            raise DegenerateSlice("segment along a jump line")
        return (-(1.0 / self.j) * count * np.sign(d[:, 0]))[:, None]


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------


def interface_crossings(f: SbvField, a, b) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Sorted crossings ``(t, jump, nu)`` of the open segment ``(a, b)``."""
    a, b = _pts(a), _pts(b)
    if len(a) != 1:
        raise ValueError("interface_crossings takes a single segment")
    rows = []
    for seg, t, jmp, nu in f.crossings(a, b):
        for k in range(len(seg)):
            if ENDPOINT_TOL < t[k] < 1 - ENDPOINT_TOL:
                rows.append((float(t[k]), jmp[k], nu[k]))
    rows.sort(key=lambda r: r[0])
    return rows


def slice_jump(f: SbvField, a, b) -> np.ndarray:
    """Signed cumulated jump ``sum [u] sign(nu . (b - a))`` over crossings in the open segment."""
    out = f.jump_sum(_pts(a), _pts(b))
    return out[0] if np.ndim(a) == 1 else out


def slice_grad(f: SbvField, a, b) -> np.ndarray:
    """Absolutely continuous increment ``u(b) - u(a) - s`` along the segment."""
    A, B = _pts(a), _pts(b)
    if np.any(f.endpoint_on_interface(A, B)):
        raise DegenerateSlice("segment endpoint on an interface")
    out = f.eval(B) - f.eval(A) - f.jump_sum(A, B)
    return out[0] if np.ndim(a) == 1 else out


def line_integral_grad(f: SbvField, a, b, order: int = 64) -> np.ndarray:
    """``int_0^1 grad u(a + t (b - a)) (b - a) dt`` with interfaces as breakpoints."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ts = [0.0] + [c[0] for c in interface_crossings(f, a, b)] + [1.0]
    xg, wg = np.polynomial.legendre.leggauss(order)
    total = np.zeros(f.m)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        tt = t0 + (t1 - t0) * (xg + 1) / 2
        pts = a + tt[:, None] * (b - a)
        g = f.grad(pts)
        total += (t1 - t0) / 2 * np.einsum("k,kmd,d->m", wg, g, b - a)
    return total


# ---------------------------------------------------------------------------
# moduli
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Modulus:
    """Jump modulus: ``power`` t^q, ``capped`` min(1, t^q), or ``augmented`` base(t) + t."""

    kind: str = "capped"
    q: float = 0.5
    base: "Modulus | None" = None

    def __post_init__(self):
        if self.kind not in ("power", "capped", "augmented"):
            raise ValueError(f"unknown modulus kind {self.kind!r}")
        if self.kind != "augmented" and not 0 < self.q <= 1:
            raise ValueError("exponent must lie in (0, 1]")
        if self.kind == "augmented" and self.base is None:
            object.__setattr__(self, "base", Modulus("power", self.q))

    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.kind == "power":
            return t**self.q
        if self.kind == "capped":
            return np.minimum(1.0, t**self.q)
        return self.base(t) + t

    def kinks(self) -> list[float]:
        if self.kind == "capped":
            return [1.0]
        if self.kind == "augmented":
            return self.base.kinks()
        return []

    @property
    def label(self) -> str:
        if self.kind == "augmented":
            return f"{self.base.label}+t"
        return f"{self.kind}({self.q:g})"


def check_modulus(g0: Modulus, rng: np.random.Generator, pairs: int = 10_000, tmax: float = 10.0) -> dict:
    """Grid and random checks of continuity, monotonicity, subadditivity and g0(0) = 0."""
    t = np.linspace(0, tmax, 4001)
    v = g0(t)
    # a jump keeps the largest sample step fixed under refinement
    coarse = float(np.max(np.abs(np.diff(v))))
    fine = float(np.max(np.abs(np.diff(g0(np.linspace(0, tmax, 64001))))))
    a = rng.uniform(0, tmax, pairs)
    b = rng.uniform(0, tmax, pairs)
    sub = g0(a + b) <= g0(a) + g0(b) + 1e-12
    return {
        "zero_at_zero": bool(v[0] == 0 and np.all(v[1:] > 0)),
        "nondecreasing": bool(np.all(np.diff(v) >= -1e-14)),
        "continuous": bool(fine < 1e-9 or fine < coarse * (1 - 1e-6)),
        "subadditive": bool(np.all(sub)),
    }


# ---------------------------------------------------------------------------
# regions and interface quadrature
# ---------------------------------------------------------------------------


def as_polygon(region) -> shapely.Polygon:
    """Accept a shapely polygon, a vertex list, or a box ``((x0, y0), (x1, y1))``."""
    if isinstance(region, shapely.geometry.base.BaseGeometry):
        return region
    arr = np.asarray(region, dtype=float)
    if arr.shape == (2, 2):
        return shapely.box(arr[0, 0], arr[0, 1], arr[1, 0], arr[1, 1])
    return shapely.Polygon(arr)


def polygon_edges(poly: shapely.Polygon) -> tuple[np.ndarray, np.ndarray]:
    rings = [poly.exterior] + list(poly.interiors)
    A, B = [], []
    for r in rings:
        c = np.asarray(r.coords)
        A.append(c[:-1])
        B.append(c[1:])
    return np.vstack(A), np.vstack(B)


def curve_intervals(curve: Curve, region) -> list[tuple[float, float]]:
    """Parameter intervals on which the curve lies inside the region."""
    poly = as_polygon(region)
    x0, y0, x1, y1 = poly.bounds
    rng_ = curve.tau_box((x0, y0), (x1, y1))
    if rng_ is None:
        return []
    t0, t1 = rng_
    A, B = polygon_edges(poly)
    seg, t, _ = _tolerant_crossings(curve, A, B)
    pts = A[seg] + t[:, None] * (B[seg] - A[seg])
    taus = curve.param_of(pts) if len(pts) else np.zeros(0)
    cuts = np.unique(np.concatenate([[t0, t1], taus[(taus > t0) & (taus < t1)], [c for c in curve.breaks() if t0 < c < t1]]))
    out = []
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    if len(mids) == 0:
        return out
    inside = shapely.contains_xy(poly, *curve.point(mids).T)
    for (lo, hi), ok in zip(zip(cuts[:-1], cuts[1:]), inside):
        if ok and hi > lo:
            if out and abs(out[-1][1] - lo) < 1e-15:
                out[-1] = (out[-1][0], hi)
            else:
                out.append((float(lo), float(hi)))
    return out


def _tolerant_crossings(curve: Curve, A, B):
    try:
        return curve.crossings(A, B)
    except DegenerateSlice:
        # an interface running along the region boundary: nudge the edges inward slightly
        c = np.vstack([A, B]).mean(axis=0)
        s = 1 - 1e-9
        return curve.crossings(c + s * (A - c), c + s * (B - c))


def curve_integral(curve: Curve, integrand: Callable, region, breakpoints_fn: Callable | None = None,
                   epsabs: float = 1e-13, epsrel: float = 1e-10) -> float:
    """``int integrand(tau) |gamma'(tau)| dtau`` over the part of the curve inside ``region``."""
    total = 0.0
    for lo, hi in curve_intervals(curve, region):
        pts = breakpoints_fn(lo, hi) if breakpoints_fn else []

        def fn(tau):
            tau_a = np.atleast_1d(tau)
            speed = np.linalg.norm(curve.deriv(tau_a), axis=-1)
            return float((integrand(tau_a) * speed)[0])

        val, _ = integrate.quad(fn, lo, hi, points=pts or None, limit=400, epsabs=epsabs, epsrel=epsrel)
        total += val
    return total


def interface_length(itf: Interface, region) -> float:
    return curve_integral(itf.curve, lambda tau: np.ones(len(tau)), region)


def g0_jump_energy(f: SbvField, g0: Modulus, region) -> float:
    """``int_{J_u cap region} g0(|[u]|) dH^1``."""
    if isinstance(f, StackedLines):
        return _stacked_energy(f, lambda a: g0(np.linalg.norm(a)), region)
    total = 0.0
    for itf in f.interfaces:
        def integrand(tau, itf=itf):
            return g0(np.linalg.norm(itf.jump(tau), axis=1))

        total += curve_integral(itf.curve, integrand, region, _kink_points(itf, g0))
    return total


def _kink_points(itf: Interface, g0: Modulus):
    kinks = g0.kinks()
    if not kinks:
        return None

    def fn(lo, hi):
        tau = np.linspace(lo, hi, 257)
        j = np.linalg.norm(itf.jump(tau), axis=1)
        pts = []
        for kv in kinks:
            s = np.sign(j - kv)
            for i in np.flatnonzero(s[:-1] * s[1:] < 0):
                pts.append(0.5 * (tau[i] + tau[i + 1]))
        return pts

    return fn


def _stacked_energy(f: StackedLines, weight: Callable, region) -> float:
    poly = as_polygon(region)
    total = 0.0
    for itf, a in zip(f.interfaces, f.amps):
        total += weight(a) * sum(hi - lo for lo, hi in curve_intervals(itf.curve, poly))
    return total


def jump_variation(f: SbvField, region) -> float:
    """``int_{J_u cap region} |[u]| dH^1``."""
    if isinstance(f, StackedLines):
        return _stacked_energy(f, lambda a: float(np.linalg.norm(a)), region)
    total = 0.0
    for itf in f.interfaces:
        total += curve_integral(itf.curve, lambda tau, itf=itf: np.linalg.norm(itf.jump(tau), axis=1), region)
    return total


def jump_set_length(f: SbvField, region) -> float:
    if isinstance(f, StackedLines):
        return _stacked_energy(f, lambda a: 1.0, region)
    return sum(interface_length(itf, region) for itf in f.interfaces)


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Truncation:
    """Radial 1-Lipschitz cut-off: identity on ``|z| <= a``, zero on ``|z| >= b``.

    The radial profile is ``r`` up to ``a``, constant ``a`` up to ``b - a`` and
    then decreases linearly to zero at ``b``.  When ``b < 2a`` the decreasing
    part has slope ``a / (b - a) > 1`` and the map is no longer 1-Lipschitz.
    """

    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("need 0 < a < b")

    @property
    def lipschitz(self) -> float:
        return max(1.0, self.a / (self.b - self.a))

    def _profile(self, r):
        a, b = self.a, self.b
        knee = max(a, b - a)
        slope = a / (b - knee)
        g = np.where(r <= a, r, np.where(r <= knee, a, np.maximum(a - slope * (r - knee), 0.0)))
        dg = np.where(r <= a, 1.0, np.where(r <= knee, 0.0, np.where(r < b, -slope, 0.0)))
        return g, dg

    def __call__(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = np.linalg.norm(z, axis=1)
        g, _ = self._profile(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, g / r, 1.0)
        return z * scale[:, None]

    def jacobian(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = np.linalg.norm(z, axis=1)
        g, dg = self._profile(r)
        m = z.shape[1]
        eye = np.eye(m)[None]
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(r[:, None] > 0, z / np.where(r > 0, r, 1)[:, None], 0.0)
            ratio = np.where(r > 0, g / np.where(r > 0, r, 1), 1.0)
        P = e[:, :, None] * e[:, None, :]
        return ratio[:, None, None] * (eye - P) + dg[:, None, None] * P


@dataclass(eq=False)
class TruncatedField(SbvField):
    """Composition ``T(u)`` of a field with a truncation."""

    base: SbvField
    trunc: Truncation

    def __post_init__(self):
        self.m = self.base.m
        itfs = []
        for k, itf in enumerate(self.base.interfaces):
            plus, minus = self.base.one_sided(k, +1), self.base.one_sided(k, -1)

            def val(x, plus=plus, minus=minus):
                return self.trunc(plus.eval(x)) - self.trunc(minus.eval(x))

            def jac(x, plus=plus, minus=minus):
                jp = np.einsum("kij,kjd->kid", self.trunc.jacobian(plus.eval(x)), plus.grad(x))
                jm = np.einsum("kij,kjd->kid", self.trunc.jacobian(minus.eval(x)), minus.grad(x))
                return jp - jm

            itfs.append(replace(itf, amplitude=SmoothMap(val, jac, self.m)))
        self.interfaces = itfs

    def eval(self, x):
        return self.trunc(self.base.eval(_pts(x)))

    def grad(self, x):
        x = _pts(x)
        return np.einsum("kij,kjd->kid", self.trunc.jacobian(self.base.eval(x)), self.base.grad(x))

    def one_sided(self, k, sign):
        return TruncatedField(self.base.one_sided(k, sign), self.trunc)


def truncate(f: SbvField, a_k: float, a_k1: float) -> TruncatedField:
    return TruncatedField(f, Truncation(a_k, a_k1))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def affine_field(A, b) -> CompositeField:
    return CompositeField(affine_map(A, b), [])


def line_step(point=(0.5, 0.0), normal=(1.0, 0.0), amplitude=1.0, background: SmoothMap | None = None) -> CompositeField:
    """Jump of ``amplitude`` across the full line through ``point`` with the given normal."""
    nu = np.asarray(normal, dtype=float)
    nu = nu / np.linalg.norm(nu)
    d = (nu[1], -nu[0])  # left normal of d is nu
    amp = amplitude if isinstance(amplitude, SmoothMap) else constant_map(amplitude)
    bg = background or zero_map(amp.m)
    return CompositeField(bg, [Interface(LineCurve(tuple(point), d), amp, name="line")])


def sine_graph(mean: float = 0.3, amp: float = 0.1, freq: float = 1.0) -> GraphCurve:
    w = 2 * np.pi * freq
    return GraphCurve(
        lambda x: mean + amp * np.sin(w * x),
        lambda x: amp * w * np.cos(w * x),
        amp * w * w,
    )


def graph_step(curve: GraphCurve | None = None, amplitude=1.0, background: SmoothMap | None = None) -> CompositeField:
    curve = curve or sine_graph()
    amp = amplitude if isinstance(amplitude, SmoothMap) else constant_map(amplitude)
    return CompositeField(background or zero_map(amp.m), [Interface(curve, amp, name="graph")])


def smooth_plus_jump(center=(0.5, 0.5), radius=0.3, background: SmoothMap | None = None,
                     amplitude: SmoothMap | None = None) -> CompositeField:
    """Smooth wave background with a jump across a circle of varying amplitude."""
    amp = amplitude or affine_map([[0.25, 0.0]], [1.0])
    bg = background or wave_map(0.2, 1.0, 1.0)
    return CompositeField(bg, [Interface(CircleCurve(tuple(center), radius), amp, name="circle")])


def indicator_halfplane(point=(0.5, 0.0), normal=(1.0, 0.0)) -> CompositeField:
    return line_step(point, normal, 1.0, None)


def indicator_disc(center=(0.5, 0.5), radius=0.3) -> CompositeField:
    return CompositeField(zero_map(), [Interface(CircleCurve(tuple(center), radius), constant_map(1.0), name="circle")])


def stacked_lines(K: int = 100, power: float = 3.0, background: SmoothMap | None = None) -> StackedLines:
    ks = np.arange(1, K + 1)
    return StackedLines.build(K, ks**-power, background)


def finite_difference_grad(f: SbvField, x, h: float = 1e-6) -> np.ndarray:
    x = _pts(x)
    cols = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        cols.append((f.eval(x + e) - f.eval(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)



def _graph_step_preset(mean: float = 0.3, amp: float = 0.1, freq: float = 1.0, amplitude=1.0) -> CompositeField:
    return graph_step(sine_graph(mean, amp, freq), amplitude)


def _sawtooth_preset(j: int = 8) -> "SawtoothField":
    return SawtoothField(int(j))


# name -> (constructor, default parameters); parameters are JSON-compatible
PRESETS: dict[str, tuple[Callable, dict]] = {
    "line_step": (line_step, {"point": [0.5, 0.0], "normal": [1.0, 0.0], "amplitude": 1.0}),
    "graph_step": (_graph_step_preset, {"mean": 0.3, "amp": 0.1, "freq": 1.0, "amplitude": 1.0}),
    "smooth_plus_jump": (smooth_plus_jump, {"center": [0.5, 0.5], "radius": 0.3}),
    "indicator_halfplane": (indicator_halfplane, {"point": [0.5, 0.0], "normal": [1.0, 0.0]}),
    "indicator_disc": (indicator_disc, {"center": [0.5, 0.5], "radius": 0.3}),
    "stacked_lines": (stacked_lines, {"K": 100, "power": 3.0}),
    "affine": (affine_field, {"A": [[1.0, 0.0]], "b": [0.0]}),
    "sawtooth": (_sawtooth_preset, {"j": 8}),
}


def make_preset(name: str, params: dict | None = None) -> SbvField:
    """Field preset by name; unknown names or parameters raise ``KeyError``/``TypeError``."""
    if name not in PRESETS:
        raise KeyError(f"unknown field preset {name!r}")
    ctor, defaults = PRESETS[name]
    unknown = set(params or {}) - set(defaults)
    if unknown:
        raise TypeError(f"unknown parameters for {name}: {sorted(unknown)}")
    kw = {**defaults, **(params or {})}
    if name == "stacked_lines":
        kw["K"] = int(kw["K"])
    return ctor(**kw)
