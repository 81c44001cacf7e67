import math

import numpy as np
import pytest

from sbvapprox.boundary import (
    DomainError,
    LipschitzDomain,
    ReflectionError,
    bilipschitz_ratios,
    build_pseudo_normal,
    build_reflection,
    extend_field,
)
from sbvapprox.field import Modulus, graph_step, line_step


@pytest.fixture(scope="module")
def square():
    return build_reflection(LipschitzDomain.box(), rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def hexagon():
    return build_reflection(LipschitzDomain.regular(6), rng=np.random.default_rng(0))


def test_domain_orientation_and_normals():
    d = LipschitzDomain(np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float))  # clockwise input
    a, b = d.edges
    assert not np.any(d.contains(0.5 * (a + b) + 1e-3 * d.normals))
    assert math.isclose(d.perimeter, 4.0)
    assert math.isclose(d.diameter, math.sqrt(2))


def test_domain_validation():
    with pytest.raises(DomainError):
        LipschitzDomain(np.array([[0, 0], [1, 1]], float))
    with pytest.raises(DomainError):
        LipschitzDomain(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))  # bow tie


def test_signed_distance():
    d = LipschitzDomain.box()
    assert np.allclose(d.signed_distance(np.array([[0.5, 0.5], [1.5, 0.5]])), [-0.5, 0.5])


def test_pseudo_normal_transversal():
    d = LipschitzDomain.regular(6)
    pn = build_pseudo_normal(d, 0.2 * d.edge_lengths.min())
    assert 0 < pn.gamma <= 1.0
    with pytest.raises(DomainError):
        build_pseudo_normal(d, d.edge_lengths.min())


def test_flat_edge_reflection_is_mirror(square):
    # away from corners the pseudo-normal is the outer normal, so the reflection mirrors across the edge
    t = 0.5 * square.width
    y = np.array([[0.5, -t], [0.5, t], [1 + t, 0.4]])
    assert np.allclose(square.reflect(y), [[0.5, t], [0.5, -t], [1 - t, 0.4]], atol=1e-12)


@pytest.mark.parametrize("name", ["square", "hexagon"])
def test_involution_and_boundary_fixed(name, request):
    c = request.getfixturevalue(name)
    rng = np.random.default_rng(1)
    y = c.sample_collar(1000, rng)
    assert np.abs(c.reflect(c.reflect(y)) - y).max() <= 1e-8 * c.domain.diameter
    bp = c.domain.arclength_point(rng.uniform(0, c.domain.perimeter, 300))
    assert np.abs(c.reflect(bp) - bp).max() <= 1e-9


@pytest.mark.parametrize("name", ["square", "hexagon"])
def test_reflection_swaps_sides(name, request):
    c = request.getfixturevalue(name)
    y = c.sample_collar(500, np.random.default_rng(2), frac=0.9)
    inside = c.domain.contains(y)
    far = np.abs(c.domain.signed_distance(y)) > 1e-6
    assert np.all(c.domain.contains(c.reflect(y[far])) != inside[far])


def test_bilipschitz_bounds(hexagon):
    r = bilipschitz_ratios(hexagon, np.random.default_rng(3), 4000)
    L = max(r.max(), 1 / r.min())
    assert L <= 3.0


def test_reflect_checked_rejects_far_points(square):
    with pytest.raises(ReflectionError):
        square.reflect_checked(np.array([[0.5, 0.5]]))


def test_extension_keeps_values_inside_and_increments_small():
    d = LipschitzDomain.box()
    f = graph_step()
    U, info = extend_field(f, d, 0.05, 2.0, Modulus("capped", 0.5), np.random.default_rng(4))
    x = np.random.default_rng(5).uniform(0.05, 0.95, (200, 2))
    assert np.allclose(U.eval(x), f.eval(x))
    assert info["bulk_increment"] <= 0.05 and info["surface_increment"] <= 0.05


def test_extension_mirrors_values_outside():
    d = LipschitzDomain.box()
    f = line_step((0.3, 0.0), (1.0, 0.0), 2.0)
    U, info = extend_field(f, d, 0.5, rng=np.random.default_rng(6))
    t = 0.25 * info["width"]
    y = np.array([[0.1, -t], [0.7, -t]])
    assert np.allclose(U.eval(y), f.eval(np.array([[0.1, t], [0.7, t]])))
