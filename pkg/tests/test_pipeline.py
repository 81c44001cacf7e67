import math

import numpy as np
import pytest
import shapely

from sbvapprox.energy import MetricsRecord
from sbvapprox.field import Modulus, affine_field, graph_step, line_step
from sbvapprox.pipeline import (
    CubeGrid,
    PipelineConfig,
    ROW_COLUMNS,
    analyze_scale,
    build_level,
    linearize_interface,
    run_convergence,
    run_level,
    select_index,
    select_shift,
)

UNIT = shapely.box(0, 0, 1, 1)


@pytest.fixture(scope="module")
def level():
    cfg = PipelineConfig(seed=3)
    return build_level(graph_step(), UNIT, 0.2, cfg, np.random.default_rng(3))


@pytest.fixture(scope="module")
def result():
    return run_level(graph_step(), UNIT, 0.2, PipelineConfig(seed=4), np.random.default_rng(4))


def test_cube_grid_roundtrip():
    g = CubeGrid.covering((0, 0, 1, 1), 0.1, (0.013, -0.02))
    x = np.random.default_rng(0).uniform(0, 1, (100, 2))
    fl = g.flat(x)
    assert np.all(fl >= 0)
    c = g.center(g.index_of_flat(fl))
    assert np.all(np.abs(x - c) <= 0.05 + 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(extension="mirror")
    with pytest.raises(ValueError):
        PipelineConfig(n_zeta=0)
    assert PipelineConfig().g.modulus == PipelineConfig().g0


def test_scale_rejects_bad_theta():
    with pytest.raises(ValueError):
        analyze_scale(graph_step(), UNIT, 0.75)


def test_scale_analysis_finds_interface_cubes():
    delta, frames = analyze_scale(graph_step(), UNIT, 0.2, rng=np.random.default_rng(0))
    assert 0 < delta <= 0.2
    assert frames.report["accepted"]
    tf = frames.interface_frames()
    assert len(tf) >= 1 / delta
    for fr in tf:
        assert abs(fr.slope) <= 1.0


def test_fixed_delta_override():
    cfg = PipelineConfig(delta_ratio=0.5)
    delta, _ = analyze_scale(graph_step(), UNIT, 0.1, cfg, np.random.default_rng(0))
    assert math.isclose(delta, 0.05)


def test_no_interfaces_no_frames():
    _, frames = analyze_scale(affine_field([[1.0, 0.0]], [0.0]), UNIT, 0.2, rng=np.random.default_rng(0))
    assert frames.interface_frames() == []


def test_linearization_errors_small(level):
    for pl in level["interfaces"]:
        assert pl.sup_err <= level["eps"] ** 2
        assert abs(pl.beta) <= level["eps"]
        assert np.allclose(np.diff(pl.nodes), pl.h)


def test_linearize_rejects_empty_frame():
    _, frames = analyze_scale(graph_step(), UNIT, 0.2, rng=np.random.default_rng(0))
    empty = [fr for fr in frames if not fr.has_interface]
    with pytest.raises(ValueError):
        linearize_interface(empty[0], 0.01, np.random.default_rng(0))


def test_deformation_near_identity(level):
    dfm = level["deformation"]
    assert level["bilipschitz_ok"]
    assert dfm.dphi_sup <= 0.1
    x = np.random.default_rng(1).uniform(0, 1, (500, 2))
    assert np.abs(dfm.inverse(dfm(x)) - x).max() <= 1e-10
    assert np.abs(dfm(x) - x).max() <= dfm.phi_sup + 1e-15


def test_deformation_identity_away_from_interface(level):
    dfm = level["deformation"]
    x = np.array([[0.5, 0.9], [0.1, 0.95], [0.8, 0.02]])
    assert np.array_equal(dfm(x), x)


def test_deformation_ratios(level):
    r = level["deformation"].bilipschitz_ratios(np.random.default_rng(2), 500)
    assert np.all(r >= 1 - 0.1 - 1e-9) and np.all(r <= 1 + 0.1 + 1e-9)


def test_level_result(result):
    assert result.metrics.finite() or math.isnan(result.metrics.jump_length)
    assert result.metrics.l1_distance <= 0.05
    assert result.metrics.g0_jump_discrepancy <= 0.2
    assert len(result.candidates) == 8
    assert set(result.params) >= {"theta", "delta", "eps", "zeta", "betas", "transport_residual"}


def test_result_is_piecewise_constant_for_step(result):
    x = np.random.default_rng(5).uniform(0, 1, (400, 2))
    g = result.u_j.grad(x)
    assert np.abs(g).max() == 0.0
    vals = result.u_j.eval(x)[:, 0]
    assert set(np.unique(np.round(vals, 12))) <= {0.0, 1.0}


def test_jump_faces_trace_interface(result):
    faces = result.u_j.jump_faces(UNIT)
    assert 1.0 < faces.total_length() < 1.3
    assert np.allclose(np.abs(faces.j0), 1.0)


def _rec(v):
    return MetricsRecord(l1_distance=v, lp_grad_distance=v, g0_jump_discrepancy=v, normal_discrepancy=v,
                         hn1_sym_diff=v)


def test_select_shift_ties_keep_first():
    cands = [((float(i), 0.0), _rec(0.5)) for i in range(8)]
    assert select_shift(cands) == (0.0, 0.0)


def test_select_shift_skips_nan():
    cands = [((float(i), 0.0), _rec(1.0 - 0.1 * i)) for i in range(8)]
    cands[7] = ((7.0, 0.0), _rec(math.nan))
    cands[3] = ((3.0, 0.0), None)
    assert select_index(cands) == 6


def test_select_shift_needs_eight():
    with pytest.raises(ValueError):
        select_shift([((0.0, 0.0), _rec(1.0))] * 7)


def test_convergence_records_failures():
    out = run_convergence(line_step(), UNIT, [0.9, 0.25], PipelineConfig(n_zeta=8, g0=Modulus("capped", 0.5)))
    assert out[0].error and out[0].result is None
    assert not out[1].error
    assert list(out[1].row) == ROW_COLUMNS
