import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbvapprox.mesh import (
    BaryCoords,
    CellId,
    GeometryError,
    GridPlacement,
    ReferencePartition,
    Simplex,
    barycentric,
    contains,
    enumerate_cells,
    enumerate_many,
    locate_cell,
    locate_many,
    monte_carlo_subcell_volumes,
    sample_shift,
    subcell_geometry,
    subcell_index,
)

UNIT_TRI = Simplex(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


def test_barycentric_unit_triangle():
    lam = barycentric(UNIT_TRI, np.array([0.25, 0.25]))
    assert np.allclose(lam, [0.5, 0.25, 0.25])
    assert np.allclose(barycentric(UNIT_TRI, UNIT_TRI.vertices), np.eye(3))


def test_subcell_index_ties_go_to_lowest():
    assert subcell_index(np.array([0.5, 0.5, 0.0])) == 0
    assert subcell_index(np.array([0.2, 0.4, 0.4])) == 1
    assert subcell_index(np.array([1 / 3, 1 / 3, 1 / 3])) == 0
    assert subcell_index(BaryCoords([0.1, 0.2, 0.7])) == 2


def test_degenerate_simplex_rejected():
    with pytest.raises(GeometryError):
        Simplex(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(GeometryError):
        Simplex(np.zeros((2, 2)))


def test_bary_coords_must_sum_to_one():
    with pytest.raises(GeometryError):
        BaryCoords([0.5, 0.1, 0.1])


def test_contains_with_tolerance():
    assert contains(UNIT_TRI, np.array([0.5, 0.5]))
    assert not contains(UNIT_TRI, np.array([0.6, 0.6]))


def test_reference_volume():
    assert ReferencePartition(2).reference_volume() == 0.5
    assert ReferencePartition(3).cells_per_cube == 6


def test_locate_lower_triangle_of_origin_cube():
    p = GridPlacement(1.0)
    c = locate_cell(p, np.array([0.7, 0.2]))
    assert c == CellId((0, 0), 0)
    s = p.simplex(c)
    assert contains(s, np.array([0.7, 0.2]))


def test_locate_on_shared_edge_picks_lowest_cell():
    p = GridPlacement(0.5)
    c = locate_cell(p, np.array([0.5, 0.25]))
    assert c.cube == (0, 0)


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2),
    eps=st.floats(0.05, 2.0),
    zx=st.floats(-1, 1),
    zy=st.floats(-1, 1),
)
def test_located_cell_contains_point(x, eps, zx, zy):
    p = GridPlacement(eps, (zx * eps, zy * eps))
    x = np.array(x)
    c = locate_cell(p, x)
    assert contains(p.simplex(c), x, tol=1e-8)


@settings(max_examples=40, deadline=None)
@given(x=st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2), i=st.integers(0, 1), k=st.integers(-3, 3))
def test_periodicity_under_double_translation(x, i, k):
    eps = 0.3
    p = GridPlacement(eps, (0.01, -0.02))
    x = np.array(x)
    shift = np.zeros(2)
    shift[i] = 2 * eps * k
    c0, t0 = locate_many(p, x[None])
    c1, t1 = locate_many(p, (x + shift)[None])
    expect = c0.copy()
    expect[0, i] += 2 * k
    assert np.array_equal(c1, expect) and np.array_equal(t0, t1)


def test_reflected_tiling_is_conforming():
    # neighbouring cubes share diagonal-free edges: every vertex of a cell is a lattice point
    p = GridPlacement(1.0)
    cubes, tags = enumerate_many(p, (0.0, 0.0), (4.0, 4.0))
    assert len(cubes) == 32
    verts = p.cell_vertices(cubes, tags)
    vols = [Simplex(v).volume for v in verts]
    assert np.allclose(vols, 0.5)
    assert math.isclose(sum(vols), 16.0)


def test_enumerate_positive_measure_only():
    p = GridPlacement(1.0)
    cells = enumerate_cells(p, (0.0, 0.0), (1.0, 1.0))
    assert cells == [CellId((0, 0), 0), CellId((0, 0), 1)]
    # a thin box along the diagonal of cube (0, 0) touches both triangles
    assert len(enumerate_cells(p, (0.2, 0.2), (0.2, 0.8))) >= 1


def test_enumerate_covers_box_area():
    p = GridPlacement(0.1, (0.013, -0.04))
    cubes, tags = enumerate_many(p, (0.0, 0.0), (1.0, 1.0))
    pts = np.random.default_rng(0).uniform(0, 1, (2000, 2))
    lc, lt = locate_many(p, pts)
    have = {(tuple(c), t) for c, t in zip(cubes.tolist(), tags.tolist())}
    assert all((tuple(c), t) in have for c, t in zip(lc.tolist(), lt.tolist()))


def test_subcell_volumes_equal_thirds():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = Simplex(rng.normal(size=(3, 2)))
        geo = subcell_geometry(s)
        assert np.allclose(geo.volumes(), s.volume / 3)


def test_subcell_faces_shorter_than_perimeter():
    rng = np.random.default_rng(2)
    for _ in range(200):
        s = Simplex(rng.normal(size=(3, 2)))
        assert 2 * subcell_geometry(s).face_measure_total() <= s.boundary_measure()


def test_monte_carlo_subcell_volumes_tetrahedron():
    rng = np.random.default_rng(3)
    s = Simplex(rng.normal(size=(4, 3)))
    vol, se = monte_carlo_subcell_volumes(s, 40_000, rng)
    assert np.all(np.abs(vol - s.volume / 4) <= 4 * se + 1e-15)


def test_sample_shift_inside_ball():
    rng = np.random.default_rng(4)
    z = np.array([sample_shift(0.25, rng) for _ in range(500)])
    assert np.all(np.linalg.norm(z, axis=1) < 0.25)


def test_placement_rejects_nonpositive_eps():
    with pytest.raises(GeometryError):
        GridPlacement(0.0)
