import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sbvapprox.interp import CellData, build_interpolant, gradient_scale, jump_bound
from sbvapprox.mesh import GeometryError, Simplex

UNIT_TRI = Simplex(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


@pytest.fixture
def example():
    # u = (0, 1, 0) at the vertices, jump 0.5 on the edge between the first two
    return build_interpolant(CellData.from_pairs(UNIT_TRI, [0.0, 1.0, 0.0], {(0, 1): 0.5}))


def test_example_gradients(example):
    assert np.allclose(example.G[0, 0], [0.5, 0.0])
    assert np.allclose(example.G[1, 0], [0.5, -0.5])


def test_example_centroid_value(example):
    assert np.allclose(example.eval(np.array([1 / 3, 1 / 3])), [1 / 6])


def test_example_edge_trace(example):
    assert np.allclose(example.edge_trace(0, 1, 0.25), [0.125])
    # the midpoint keeps the lower branch; just past it the jump appears
    below = example.edge_trace(0, 1, 0.5)
    above = example.edge_trace(0, 1, 0.5 + 1e-12)
    assert np.allclose(above - below, [0.5], atol=1e-9)


def test_example_one_sided_values_at_edge_midpoint(example):
    x = np.array([0.5, 0.0])
    left = example.eval_from(x, np.array([0.0, 0.0]))
    right = example.eval_from(x, np.array([1.0, 0.0]))
    assert np.allclose(right - left, [0.5])


def test_example_face_jump(example):
    assert np.allclose(example.face_jump(0, 1, np.array([1 / 3, 1 / 3, 1 / 3])), [-1 / 3])
    assert np.allclose(np.abs(example.face_jump(0, 1, np.array([0.5, 0.5, 0.0]))), [0.5])


def test_face_jump_off_face_rejected(example):
    with pytest.raises(GeometryError):
        example.face_jump(0, 1, np.array([0.6, 0.2, 0.2]))


def test_eval_outside_rejected(example):
    with pytest.raises(GeometryError):
        example.eval(np.array([2.0, 2.0]))


def test_vertex_values_reproduced():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = Simplex(rng.normal(size=(3, 2)))
        u = rng.normal(size=(3, 2))
        ip = build_interpolant(CellData.from_pairs(s, u, {(0, 2): rng.normal(size=2)}))
        assert np.allclose(ip.eval(s.vertices), u)


def test_no_jumps_gives_linear_interpolant():
    rng = np.random.default_rng(1)
    s = Simplex(rng.normal(size=(3, 2)))
    A, b = rng.normal(size=(1, 2)), rng.normal(size=1)
    ip = build_interpolant(CellData(s, s.vertices @ A.T + b, np.zeros((3, 3, 1))))
    x = rng.dirichlet(np.ones(3), size=20) @ s.vertices
    assert np.allclose(ip.eval(x), x @ A.T + b)
    assert np.allclose(ip.G, A[None])


def test_edge_jumps_must_be_antisymmetric():
    s = np.zeros((3, 3, 1))
    s[0, 1] = 1.0
    with pytest.raises(ValueError):
        CellData(UNIT_TRI, np.zeros(3), s)


def test_wrong_vertex_count_rejected():
    with pytest.raises(ValueError):
        CellData(UNIT_TRI, np.zeros(4), np.zeros((3, 3)))


@settings(max_examples=80, deadline=None)
@given(
    u=arrays(np.float64, 3, elements=st.floats(-5, 5)),
    s01=st.floats(-5, 5),
    s02=st.floats(-5, 5),
    s12=st.floats(-5, 5),
    a=st.floats(-3, 3),
)
def test_linearity_in_data(u, s01, s02, s12, a):
    d = CellData.from_pairs(UNIT_TRI, u, {(0, 1): s01, (0, 2): s02, (1, 2): s12})
    e = CellData.from_pairs(UNIT_TRI, u[::-1], {(0, 1): s12})
    x = np.array([[0.2, 0.1], [0.1, 0.6], [0.45, 0.3]])
    lhs = build_interpolant(d.scale(a) + e).eval(x)
    rhs = a * build_interpolant(d).eval(x) + build_interpolant(e).eval(x)
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(s=arrays(np.float64, 3, elements=st.floats(-10, 10)), w=arrays(np.float64, 3, elements=st.floats(0.01, 1)))
def test_face_jumps_bounded(s, w):
    d = CellData.from_pairs(UNIT_TRI, [0.0, 0.0, 0.0], {(0, 1): s[0], (0, 2): s[1], (1, 2): s[2]})
    ip = build_interpolant(d)
    for i, j in ip.internal_faces():
        k = 3 - i - j
        lam = np.zeros(3)
        lam[i] = lam[j] = w[0] / (2 * w[0] + min(w[1], w[0]))
        lam[k] = 1 - 2 * lam[i]
        assert np.abs(ip.face_jump(i, j, lam)).max() <= jump_bound(d) + 1e-12


def test_gradient_scale_unit_triangle():
    assert np.isclose(gradient_scale(UNIT_TRI), np.sqrt(2) / 0.5)


def test_three_dimensional_edge_trace():
    rng = np.random.default_rng(5)
    s = Simplex(rng.normal(size=(4, 3)))
    d = CellData.from_pairs(s, rng.normal(size=4), {(1, 3): 0.7})
    ip = build_interpolant(d)
    t = np.array([0.2, 0.8])
    x = s.vertices[1] + t[:, None] * (s.vertices[3] - s.vertices[1])
    assert np.allclose(ip.eval(x), ip.edge_trace(1, 3, t))
    assert np.allclose(ip.edge_trace(3, 1, 1 - t), ip.edge_trace(1, 3, t))
