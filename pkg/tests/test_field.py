import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from sbvapprox.field import (
    DegenerateSlice,
    Modulus,
    SawtoothField,
    Truncation,
    affine_map,
    check_modulus,
    finite_difference_grad,
    g0_jump_energy,
    graph_step,
    indicator_disc,
    interface_crossings,
    jump_set_length,
    jump_variation,
    line_integral_grad,
    line_step,
    make_preset,
    slice_grad,
    slice_jump,
    smooth_plus_jump,
    stacked_lines,
    truncate,
)

UNIT = shapely.box(0, 0, 1, 1)


def step_plus_y():
    # 2 [x > 0.5] + y
    return line_step((0.5, 0.0), (1.0, 0.0), 2.0, affine_map([[0.0, 1.0]], [0.0]))


def test_slice_example():
    f = step_plus_y()
    a, b = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    assert np.allclose(slice_jump(f, a, b), [2.0])
    assert np.allclose(slice_grad(f, a, b), [1.0])
    assert np.allclose(line_integral_grad(f, a, b), [1.0])


def test_slice_reversed_changes_sign():
    f = step_plus_y()
    a, b = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    assert np.allclose(slice_jump(f, b, a), -slice_jump(f, a, b))


def test_slice_split_is_additive():
    f = graph_step()
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        t = rng.uniform(0.1, 0.9)
        c = a + t * (b - a)
        if f.endpoint_on_interface(a[None], c[None])[0]:
            continue
        assert np.allclose(slice_jump(f, a, b), slice_jump(f, a, c) + slice_jump(f, c, b))


def test_increment_splits_into_jump_and_gradient():
    f = smooth_plus_jump()
    rng = np.random.default_rng(1)
    for _ in range(30):
        a, b = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        inc = f.eval(b[None])[0] - f.eval(a[None])[0]
        assert np.allclose(slice_jump(f, a, b) + line_integral_grad(f, a, b), inc, atol=1e-8)


def test_crossings_sorted():
    f = stacked_lines(10)
    rows = interface_crossings(f, np.array([0.5, 0.05]), np.array([0.5, 1.1]))
    ts = [r[0] for r in rows]
    assert ts == sorted(ts) and len(ts) == 10


def test_segment_along_interface_is_degenerate():
    f = stacked_lines(5)
    with pytest.raises(DegenerateSlice):
        slice_jump(f, np.array([0.0, 0.5]), np.array([1.0, 0.5]))


def test_endpoint_on_interface_contributes_nothing():
    f = line_step()
    assert np.allclose(slice_jump(f, np.array([0.5, 0.2]), np.array([1.0, 0.2])), [0.0])


def test_sawtooth_values_and_jumps():
    f = SawtoothField(8)
    assert np.allclose(f.eval(np.array([[0.3, 0.0]])), [[(2.4 % 1) / 8]])
    # four crossings at 1/8, 2/8, 3/8, 4/8 each of -1/8
    assert np.allclose(f.jump_sum(np.array([[0.05, 0.5]]), np.array([[0.55, 0.5]])), [[-0.5]])


def test_line_step_g0_energy_is_one():
    assert math.isclose(g0_jump_energy(line_step(), Modulus("capped", 0.5), UNIT), 1.0, rel_tol=1e-10)


def test_stacked_lines_energy_oracle():
    f = stacked_lines(100)
    tall = shapely.box(0, 0, 1, 1.25)
    expect = float(np.sum(np.arange(1, 101, dtype=float) ** -1.5))
    assert math.isclose(g0_jump_energy(f, Modulus("power", 0.5), tall), expect, rel_tol=1e-12)
    assert math.isclose(jump_set_length(f, tall), 100.0)
    # the line y = 1 lies on the boundary of the unit square and is not counted there
    assert math.isclose(jump_set_length(f, UNIT), 99.0)


def test_circle_length_and_variation():
    f = indicator_disc((0.5, 0.5), 0.3)
    assert math.isclose(jump_set_length(f, UNIT), 2 * math.pi * 0.3, rel_tol=1e-9)
    assert math.isclose(jump_variation(f, UNIT), 2 * math.pi * 0.3, rel_tol=1e-9)


def test_graph_length_clipped_to_region():
    f = graph_step()
    half = shapely.box(0, 0, 0.5, 1)
    assert jump_set_length(f, half) < jump_set_length(f, UNIT)
    assert jump_set_length(f, UNIT) > 1.0


@pytest.mark.parametrize("g0", [Modulus("power", 0.5), Modulus("capped", 0.5), Modulus("augmented", 0.3),
                                Modulus("power", 1.0)])
def test_modulus_hypotheses(g0):
    res = check_modulus(g0, np.random.default_rng(0))
    assert all(res.values()), res


def test_check_modulus_flags_discontinuity():
    class Step(Modulus):
        def __call__(self, t):
            return np.where(np.abs(np.asarray(t, float)) > 0, 1.0, 0.0)

    assert not check_modulus(Step(), np.random.default_rng(0))["continuous"]


def test_modulus_rejects_bad_exponent():
    with pytest.raises(ValueError):
        Modulus("power", 1.5)
    with pytest.raises(ValueError):
        Modulus("log")


def test_finite_difference_matches_grad():
    f = smooth_plus_jump()
    x = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]])
    assert np.allclose(finite_difference_grad(f, x), f.grad(x), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.1, 2.0), gap=st.floats(0.0, 3.0), z=st.lists(st.floats(-6, 6), min_size=2, max_size=2))
def test_truncation_profile(a, gap, z):
    T = Truncation(a, 2 * a + gap)
    z = np.array(z)
    out = T(z)[0]
    r = np.linalg.norm(z)
    assert np.linalg.norm(out) <= min(r, a) + 1e-12
    if r <= a:
        assert np.allclose(out, z)
    if r >= T.b:
        assert np.allclose(out, 0)
    assert T.lipschitz == 1.0


def test_truncation_jacobian_matches_difference():
    T = Truncation(1.0, 3.0)
    z = np.array([[0.3, 0.4], [1.5, 0.2], [2.0, 1.0]])
    h = 1e-7
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (T(z + e) - T(z - e)) / (2 * h)
        assert np.allclose(T.jacobian(z)[:, :, k], fd, atol=1e-6)


def test_truncated_field_bounded():
    f = truncate(step_plus_y(), 1.0, 2.0)
    x = np.random.default_rng(2).uniform(0, 1, (100, 2))
    assert np.all(np.linalg.norm(f.eval(x), axis=1) <= 1.0 + 1e-12)


def test_presets():
    f = make_preset("line_step", {"amplitude": 3.0})
    assert np.allclose(f.eval(np.array([[0.9, 0.1]])), [[3.0]])
    assert len(make_preset("stacked_lines", {"K": 7}).interfaces) == 7
    with pytest.raises(KeyError):
        make_preset("nope")
    with pytest.raises(TypeError):
        make_preset("line_step", {"bogus": 1})
