"""Acceptance checks, one test per criterion.

Each test prints a single ``CRITERION k: PASS`` or ``CRITERION k: FAIL`` line
(visible under ``pytest -v``) and then asserts the same condition.
"""

from __future__ import annotations

import functools
import itertools
import math
import time

import numpy as np
import pytest
import shapely
import shapely.affinity

from sbvapprox.boundary import LipschitzDomain, bilipschitz_ratios, build_reflection
from sbvapprox.field import (
    CompositeField,
    Interface,
    LineCurve,
    Modulus,
    SawtoothField,
    constant_map,
    graph_step,
    indicator_disc,
    indicator_halfplane,
    line_step,
    make_preset,
    sine_graph,
    smooth_plus_jump,
    stacked_lines,
    wave_map,
    affine_field,
)
from sbvapprox.interp import CellData, build_interpolant
from sbvapprox.mesh import (
    GeometryError,
    GridPlacement,
    Simplex,
    enumerate_many,
    monte_carlo_face_measure,
    sample_shift,
    subcell_geometry,
)
from sbvapprox.pipeline import PipelineConfig, run_convergence, run_level
from sbvapprox.projector import (
    TranslatedField,
    averaged_bounds_report,
    cell_data_distance,
    idempotence_check,
    project,
    project_cells,
    subcell_quads,
)

UNIT = shapely.box(0.0, 0.0, 1.0, 1.0)


@pytest.fixture
def report(capsys):
    def _report(k: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _report


def _random_simplex(rng, n):
    while True:
        try:
            return Simplex(rng.normal(size=(n + 1, n)))
        except GeometryError:
            continue


def _random_data(rng, n, m):
    s = _random_simplex(rng, n)
    u = rng.normal(size=(n + 1, m))
    a = rng.normal(size=(n + 1, n + 1, m))
    a = np.triu(a.transpose(2, 0, 1), 1).transpose(1, 2, 0)
    return CellData(s, u, a - a.transpose(1, 0, 2))


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_interpolant_exactness(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_trace = worst_cycle = 0.0
    worst_jump_ratio = 0.0
    for _ in range(1000):
        n = int(rng.choice([2, 3]))
        m = int(rng.choice([1, 2, 3]))
        d = _random_data(rng, n, m)
        ip = build_interpolant(d)
        V = d.simplex.vertices
        xi = d.u[None, :, :] - d.u[:, None, :] - d.s
        for i, j in itertools.combinations(range(n + 1), 2):
            t = np.concatenate([rng.uniform(0.02, 0.48, 3), rng.uniform(0.52, 0.98, 3)])
            x = V[i] + t[:, None] * (V[j] - V[i])
            expect = d.u[i] + t[:, None] * xi[i, j] + d.s[i, j] * (t[:, None] > 0.5)
            worst_trace = max(worst_trace, np.abs(ip.eval(x) - expect).max(),
                              np.abs(ip.edge_trace(i, j, t) - expect).max())
        bound = 3.0 * math.sqrt(sum(np.sum(d.s[i, j] ** 2) for i, j in itertools.combinations(range(n + 1), 2)))
        for i, j in itertools.combinations(range(n + 1), 2):
            w = rng.dirichlet(np.ones(n), size=20)
            lam = np.zeros((20, n + 1))
            rest = [k for k in range(n + 1) if k not in (i, j)]
            lam[:, i] = lam[:, j] = w[:, 0] / 2
            lam[:, rest] = w[:, 1:]
            lam = lam[lam[:, i] >= lam.max(axis=1) - 1e-15]
            x = lam @ V
            jump = np.linalg.norm(ip.piece(i, x) - ip.piece(j, x), axis=1)
            if len(jump) and bound > 0:
                worst_jump_ratio = max(worst_jump_ratio, jump.max() / bound)
        for i, j, k in itertools.permutations(range(n + 1), 3):
            c = xi[i, j] + xi[j, k] + xi[k, i] + d.s[i, j] + d.s[j, k] + d.s[k, i]
            worst_cycle = max(worst_cycle, np.abs(c).max())
    dt = time.perf_counter() - t0
    ok = worst_trace <= 1e-10 and worst_jump_ratio <= 1.0 and worst_cycle <= 1e-10 and dt < 10
    report(1, ok, f"trace err {worst_trace:.2e}, max |[v]|/(3|s|) {worst_jump_ratio:.3f}, "
                  f"cycle err {worst_cycle:.2e}, {dt:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------


def test_criterion_2_face_measure_inequality(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst2 = 0.0
    for _ in range(1000):
        d = _random_data(rng, 2, 1)
        geo = subcell_geometry(d.simplex)
        ip = build_interpolant(d)
        # ordered pairs i != j, restricted to faces carrying a jump
        jl = 0.0
        for (i, j) in geo.faces:
            lam = np.array([[0.5 if k in (i, j) else 0.0 for k in range(3)], [1 / 3] * 3])
            if np.any(np.abs(ip.face_jump(i, j, lam)) > 0):
                jl += 2 * geo.face_measure(i, j)
        worst2 = max(worst2, jl / d.simplex.boundary_measure())
    z_total, worst3 = [], 0.0
    for _ in range(1000):
        s = _random_simplex(rng, 3)
        geo = subcell_geometry(s)
        est, var, exact = 0.0, 0.0, 0.0
        for (i, j) in geo.faces:
            e, se = monte_carlo_face_measure(s, i, j, 4000, rng)
            est += 2 * e
            var += 4 * se**2
            exact += 2 * geo.face_measure(i, j)
        sd = math.sqrt(var)
        worst3 = max(worst3, (est - 3 * sd) / s.boundary_measure())
        z_total.append(((est - exact), var))
    diff = sum(a for a, _ in z_total)
    z = diff / math.sqrt(sum(v for _, v in z_total))
    dt = time.perf_counter() - t0
    ok = worst2 <= 1.0 and worst3 <= 1.0 and abs(z) <= 3.0 and dt < 60
    report(2, ok, f"n=2 max ratio {worst2:.4f}; n=3 max (MC-3sd)/boundary {worst3:.4f}, "
                  f"MC vs exact z={z:.2f}, {dt:.1f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------


def _random_field(rng):
    kind = rng.integers(4)
    if kind == 0:
        ang = rng.uniform(0, 2 * np.pi)
        return line_step(tuple(rng.uniform(0.2, 0.8, 2)), (math.cos(ang), math.sin(ang)), float(rng.normal()),
                         wave_map(0.2, float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2))))
    if kind == 1:
        return graph_step(sine_graph(float(rng.uniform(0.3, 0.6)), 0.1, 1.0), float(rng.normal()))
    if kind == 2:
        return smooth_plus_jump(tuple(rng.uniform(0.4, 0.6, 2)), float(rng.uniform(0.15, 0.3)))
    return affine_field(rng.normal(size=(1, 2)), rng.normal(size=1))


def test_criterion_3_projector_laws(report):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    region = shapely.box(0.25, 0.25, 0.75, 0.75)
    idem = trans = affine = 0.0
    local_ok = True
    for _ in range(100):
        f = _random_field(rng)
        eps = 1.0 / rng.choice([6, 8, 10])
        z = sample_shift(eps, rng)
        pw = project(f, eps, z, region)
        idem = max(idem, cell_data_distance(pw, idempotence_check(pw)))

        # translation: Pi_{eps,z}[f(. - z)] = [Pi_{eps,0} f](. - z)
        p0 = project(f, eps, (0.0, 0.0), region)
        p1 = project(TranslatedField(f, z), eps, z, shapely.affinity.translate(region, *z))
        x = rng.uniform(0.3, 0.7, (50, 2))
        trans = max(trans, cell_data_distance(p0, p1), np.abs(p1.eval(x + z) - p0.eval(x)).max())

        A, b = rng.normal(size=(2, 2)), rng.normal(size=2)
        pa = project(affine_field(A, b), eps, z, region)
        affine = max(affine, np.abs(pa.eval(x) - (x @ A.T + b)).max(), np.abs(pa.grad(x) - A).max())

        # locality: a far interface does not change cells meeting omega
        lo = rng.uniform(0.2, 0.4, 2)
        hi = lo + 0.1
        far = float(hi[0] + eps * math.sqrt(2) + 0.05)
        itf = Interface(LineCurve((far, 0.0), (0.0, -1.0)), constant_map(float(rng.normal())), name="far")
        g = CompositeField(f.background, [itf] + [Interface(i.curve, i.amplitude, i.name) for i in f.interfaces])
        pl = GridPlacement(eps, tuple(z))
        cubes, tags = enumerate_many(pl, lo, hi)
        a1 = project_cells(f, pl, cubes, tags)
        a2 = project_cells(g, pl, cubes, tags)
        local_ok &= np.array_equal(a1.u, a2.u) and np.array_equal(a1.s, a2.s)
    dt = time.perf_counter() - t0
    ok = idem <= 1e-9 and trans <= 1e-9 and affine <= 1e-9 and local_ok and dt < 30
    report(3, ok, f"idempotence {idem:.1e}, translation {trans:.1e}, affine {affine:.1e}, "
                  f"locality {'exact' if local_ok else 'changed'}, {dt:.1f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------

BOUND_CONSTANT = 4.0


def test_criterion_4_averaged_bounds(report):
    t0 = time.perf_counter()
    g0 = Modulus("capped", 0.5)
    lines, ok = [], True
    for name, f in (("LineStep", line_step()), ("SmoothPlusJump", smooth_plus_jump())):
        rng = np.random.default_rng(0)
        ratios = {"bulk": [], "surface": [], "l1": []}
        for eps in (1 / 8, 1 / 16, 1 / 32):
            r = averaged_bounds_report(f, eps, 16, np.zeros((1, 2)), g0, UNIT, rng)
            ratios["bulk"].append(r.bulk_ratio)
            ratios["surface"].append(r.surface_ratio)
            ratios["l1"].append(r.l1_ratio)
        for key, vals in ratios.items():
            v = np.array(vals)
            bounded = bool(np.all(v <= BOUND_CONSTANT))
            pos = v[v > 0]
            stable = len(pos) == 0 or (len(pos) == len(v) and pos.max() / pos.min() <= 2.0)
            ok &= bounded and stable
            lines.append(f"{name}.{key} {np.round(v, 3).tolist()}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    report(4, ok, f"C={BOUND_CONSTANT:g}; " + "; ".join(lines) + f"; {dt:.1f}s")
    assert ok


# -- 5 ---------------------------------------------------------------------


def test_criterion_5_sawtooth_sup(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    eps = 0.25
    worst = math.inf
    for j in (8, 16, 32):
        f = SawtoothField(j)
        for _ in range(8):
            pw = project(f, eps, sample_shift(eps, rng), UNIT)
            q = subcell_quads(pw)  # affine pieces attain their sup on subcell corners
            vals = np.einsum("njmd,njqd->njqm", pw.G, q) + pw.c[:, :, None, :]
            worst = min(worst, float(np.abs(vals).max()))
    dt = time.perf_counter() - t0
    ok = worst >= eps / 4 and dt < 10
    report(5, ok, f"min over j and shifts of sup|Pi u_j| = {worst:.4f} (eps/4 = {eps / 4}), {dt:.1f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------


def test_criterion_6_reflection(report):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, d in (("square", LipschitzDomain.box()), ("hexagon", LipschitzDomain.regular(6))):
        rng = np.random.default_rng(6)
        c = build_reflection(d, rng=rng)
        y = c.sample_collar(2000, rng)
        inv = float(np.abs(c.reflect(c.reflect(y)) - y).max())
        bp = d.arclength_point(rng.uniform(0, d.perimeter, 500))
        bres = float(np.abs(c.reflect(bp) - bp).max())
        r = bilipschitz_ratios(c, rng, 10_000)
        L = float(max(r.max(), 1 / r.min()))
        ok &= inv <= 1e-8 * d.diameter and bres <= 1e-9 and 1 / L <= r.min() and r.max() <= L and L <= 3
        parts.append(f"{name}: involution {inv:.1e}, boundary {bres:.1e}, L={L:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 30
    report(6, ok, "; ".join(parts) + f"; {dt:.1f}s")
    assert ok


# -- 7, 8 ------------------------------------------------------------------

THETA_LADDER = (0.2, 0.1, 0.05, 0.025)
INVERSION_TOL = 1e-12


@functools.lru_cache(maxsize=None)
def _finite_jump_ladder():
    f = make_preset("graph_step", {})
    cfg = PipelineConfig(g0=Modulus("capped", 0.5), seed=1)
    t0 = time.perf_counter()
    rows = [o.row for o in run_convergence(f, UNIT, THETA_LADDER, cfg)]
    return rows, time.perf_counter() - t0


def _inversions(vals) -> int:
    return sum(1 for a, b in zip(vals[:-1], vals[1:]) if not (b <= a + INVERSION_TOL))


def _rel(a: float, b: float) -> float:
    # relative deviation; absolute when the reference vanishes
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def test_criterion_7_convergence_ladder(report):
    rows, dt = _finite_jump_ladder()
    errors = [r["error"] for r in rows if r["error"]]
    inv = {k: _inversions([r[k] for r in rows]) for k in ("l1", "lp_grad", "d1", "d2", "hn1_sym_diff")}
    last = rows[-1]
    surf = _rel(last["surface_uj"], last["surface_u"])
    bulk = _rel(last["bulk_uj"], last["bulk_u"])
    ok = (not errors and all(v <= 1 for v in inv.values()) and last["l1"] <= 0.02
          and last["d1"] <= 0.05 * last["g0_energy_u"] and surf <= 0.03 and bulk <= 0.03 and dt < 300)
    report(7, ok, f"inversions {inv}; final l1 {last['l1']:.4f}, d1 {last['d1']:.4f} "
                  f"(mu {last['g0_energy_u']:.4f}), surface dev {surf:.2%}, bulk dev {bulk:.2%}, {dt:.1f}s"
                  + (f"; errors {errors}" if errors else ""))
    assert ok


def test_criterion_8_strict_convergence(report):
    rows, _ = _finite_jump_ladder()
    last = rows[-1]
    dev = {k: _rel(last[f"{k}_uj"], last[f"{k}_u"]) for k in ("tv", "area", "jv")}
    ok = not last["error"] and all(v <= 0.03 for v in dev.values())
    report(8, ok, ", ".join(f"{k} {last[k + '_uj']:.4f} vs {last[k + '_u']:.4f} ({v:.2%})" for k, v in dev.items()))
    assert ok


# -- 9 ---------------------------------------------------------------------

EPS_LADDER = (1 / 320, 1 / 1280, 1 / 2048)


def test_criterion_9_infinite_jump_set(report):
    f = stacked_lines(100, 3.0)
    region = shapely.box(0.0, 0.0, 1.0, 1.25)
    cfg = PipelineConfig(g0=Modulus("power", 0.5), delta_ratio=0.25, n_zeta=1, discrepancy=False, seed=0)
    t0 = time.perf_counter()
    rows = [o.row for o in run_convergence(f, region, EPS_LADDER, cfg, ladder_kind="eps", theta_for_eps=0.05)]
    dt = time.perf_counter() - t0
    last = rows[-1]
    oracle = float(np.sum(np.arange(1, 101, dtype=float) ** -1.5))
    dev = _rel(last["g0_energy_uj"], oracle)
    ok = not last["error"] and dev <= 0.05 and last["jump_length"] >= 80 and dt < 300
    report(9, ok, f"g0 energy {last['g0_energy_uj']:.4f} vs oracle {oracle:.4f} ({dev:.2%}), "
                  f"jump length {last['jump_length']:.1f}, {dt:.1f}s" + (f"; error {last['error']}" if last["error"] else ""))
    assert ok


# -- 10 --------------------------------------------------------------------


def test_criterion_10_structure_preservation(report):
    rng = np.random.default_rng(10)
    grad_max, jump_free_faces = 0.0, 0
    for f in (indicator_disc(), indicator_halfplane((0.4, 0.0), (1.0, 0.3))):
        for eps in (1 / 8, 1 / 16, 1 / 32):
            pw = project(f, eps, sample_shift(eps, rng), UNIT)
            grad_max = max(grad_max, float(np.abs(pw.G).max()))
        res = run_level(f, UNIT, 0.1, PipelineConfig(), rng)
        grad_max = max(grad_max, max(float(np.abs(F.G).max()) for F in res.u_j.functions))
    for f in (affine_field([[1.0, -2.0]], [0.5]), make_preset("affine", {})):
        for eps in (1 / 8, 1 / 16):
            jump_free_faces += len(project(f, eps, sample_shift(eps, rng), UNIT).jump_faces(UNIT))
        jump_free_faces += len(run_level(f, UNIT, 0.1, PipelineConfig(), rng).u_j.jump_faces(UNIT))
    ok = grad_max == 0.0 and jump_free_faces == 0
    report(10, ok, f"max |grad| on indicator input {grad_max}, faces for jump-free input {jump_free_faces}")
    assert ok
