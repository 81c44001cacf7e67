import csv
import json

import pytest

from sbvapprox.cli import ConfigError, ExperimentConfig, main


def _write(tmp_path, cfg: dict):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_catalog_lists_presets(tmp_path, capsys):
    assert main(["catalog", "--out", str(tmp_path)]) == 0
    names = {r["name"] for r in _rows(tmp_path / "catalog.csv") if r["category"] == "field"}
    assert {"line_step", "graph_step", "stacked_lines", "sawtooth"} <= names


def test_project_writes_cells_and_faces(tmp_path):
    cfg = _write(tmp_path, {"field": {"preset": "line_step"}, "eps": 0.25, "seed": 1})
    assert main(["project", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "cells.csv")) > 0
    faces = _rows(tmp_path / "faces.csv")
    assert len(faces) > 0


def test_energy_rows(tmp_path):
    cfg = _write(tmp_path, {"field": {"preset": "line_step"}, "eps": 0.125,
                            "densities": {"g0": {"kind": "capped", "q": 0.5}}})
    assert main(["energy", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "energy.csv")
    assert [r["object"] for r in rows] == ["field", "projection"]
    assert float(rows[0]["g0_energy"]) == pytest.approx(1.0)


def test_converge_writes_table_and_plots(tmp_path):
    cfg = _write(tmp_path, {"field": {"preset": "line_step"}, "ladder": [0.25], "candidates": True, "seed": 0})
    assert main(["converge", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "converge.csv")
    assert len(rows) == 1 and rows[0]["error"] == ""
    assert (tmp_path / "candidates.csv").exists()
    assert (tmp_path / "plot" / "l1.dat").exists()


def test_reflect_hexagon(tmp_path):
    hexagon = [[1.0, 0.5], [0.75, 0.933], [0.25, 0.933], [0.0, 0.5], [0.25, 0.067], [0.75, 0.067]]
    cfg = _write(tmp_path, {"field": {"preset": "affine"}, "domain": {"polygon": hexagon},
                            "reflect": {"pairs": 2000, "bins": 5}})
    assert main(["reflect", "--config", cfg, "--out", str(tmp_path)]) == 0
    row = _rows(tmp_path / "reflect.csv")[0]
    assert float(row["involution_residual"]) <= 1e-8
    assert float(row["lipschitz_constant"]) <= 3
    assert len(_rows(tmp_path / "reflect_histogram.csv")) == 5


@pytest.mark.parametrize("bad", [
    {"field": {"preset": "nope"}},
    {"field": {"preset": "line_step"}, "extra": 1},
    {"field": {"preset": "line_step"}, "theta": 0.9},
    {"field": {"preset": "line_step", "params": {"bogus": 1}}},
    {"field": {"preset": "line_step"}, "domain": {"box": [[0, 0], [1, 1]], "polygon": [[0, 0], [1, 0], [0, 1]]}},
])
def test_bad_config_exit_code(tmp_path, bad, capsys):
    cfg = _write(tmp_path, bad)
    assert main(["project", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["project", "--out", str(tmp_path)]) == 2
    assert main(["project", "--config", str(tmp_path / "none.json")]) == 2


def test_invalid_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    assert main(["energy", "--config", str(p)]) == 2


def test_degenerate_polygon_is_config_error():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"field": {"preset": "line_step"},
                                    "domain": {"polygon": [[0, 0], [1, 1], [1, 0], [0, 1]]}}).region()


def test_seed_override(tmp_path):
    cfg = _write(tmp_path, {"field": {"preset": "line_step"}, "eps": 0.25, "seed": 1})
    main(["project", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "a")])
    main(["project", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "cells.csv").read_text() == (tmp_path / "b" / "cells.csv").read_text()
