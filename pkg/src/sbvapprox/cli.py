"""Command line front end: JSON experiment configs in, CSV and plot-data files out.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import shapely

from .boundary import DomainError, LipschitzDomain, ReflectionError, bilipschitz_ratios, build_reflection
from .energy import BulkDensity, SurfaceDensity, bulk_energy, faces_g0_energy, strict_metrics, surface_energy
from .field import PRESETS, DegenerateSlice, Modulus, make_preset
from .mesh import sample_shift
from .pipeline import ROW_COLUMNS, PipelineConfig, ScaleError, field_reference, run_convergence
from .projector import project

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["field"],
    "properties": {
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["preset"],
            "properties": {"preset": {"enum": sorted(PRESETS)}, "params": {"type": "object"}},
        },
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "box": {"type": "array", "items": _POINT, "minItems": 2, "maxItems": 2},
                "polygon": {"type": "array", "items": _POINT, "minItems": 3},
            },
            "oneOf": [{"required": ["box"]}, {"required": ["polygon"]}],
        },
        "ladder": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "ladder_kind": {"enum": ["theta", "eps"]},
        "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "densities": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "psi": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"kind": {"enum": ["power", "area"]}, "p": {"type": "number", "minimum": 1}},
                },
                "g": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"kind": {"enum": ["g0", "constant", "anisotropic"]},
                                   "alpha": {"type": "number", "exclusiveMinimum": 0}},
                },
                "g0": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"kind": {"enum": ["power", "capped"]},
                                   "q": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                },
            },
        },
        "n_zeta": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "candidates": {"type": "boolean"},
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_ratio": {"type": "number", "exclusiveMinimum": 0},
                "delta_ratio": {"type": "number", "exclusiveMinimum": 0},
                "residual_multiple": {"type": "number", "exclusiveMinimum": 0},
                "extension": {"enum": ["natural", "reflect"]},
                "discrepancy": {"type": "boolean"},
                "metrics_refine": {"type": "integer", "minimum": 1},
            },
        },
        "reflect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "number", "exclusiveMinimum": 0},
                "pairs": {"type": "integer", "minimum": 10},
                "bins": {"type": "integer", "minimum": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    preset: str
    params: dict = field(default_factory=dict)
    domain: list = field(default_factory=lambda: [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    ladder: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    ladder_kind: str = "theta"
    theta: float = 0.1
    eps: float = 0.25
    psi: dict = field(default_factory=lambda: {"kind": "power", "p": 2.0})
    g: dict = field(default_factory=lambda: {"kind": "g0"})
    g0: dict = field(default_factory=lambda: {"kind": "capped", "q": 0.5})
    n_zeta: int = 8
    seed: int = 0
    output: str = "out"
    candidates: bool = False
    pipeline: dict = field(default_factory=dict)
    reflect: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{loc}: {exc.message}") from None
        cfg = cls(raw["field"]["preset"], dict(raw["field"].get("params", {})))
        dom = raw.get("domain")
        if dom is not None:
            if "box" in dom:
                (x0, y0), (x1, y1) = dom["box"]
                cfg.domain = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
            else:
                cfg.domain = dom["polygon"]
        for key in ("ladder", "ladder_kind", "theta", "eps", "n_zeta", "seed", "output", "candidates",
                    "pipeline", "reflect"):
            if key in raw:
                setattr(cfg, key, raw[key])
        for key in ("psi", "g", "g0"):
            if key in raw.get("densities", {}):
                setattr(cfg, key, {**getattr(cfg, key), **raw["densities"][key]})
        return cfg

    # -- builders ------------------------------------------------------------

    def lipschitz_domain(self) -> LipschitzDomain:
        try:
            return LipschitzDomain(np.asarray(self.domain, dtype=float))
        except DomainError as exc:
            raise ConfigError(f"domain: {exc}") from None

    def region(self) -> shapely.Polygon:
        return self.lipschitz_domain().polygon

    def build_field(self):
        try:
            return make_preset(self.preset, self.params)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field: {exc}") from None

    def modulus(self) -> Modulus:
        return Modulus(self.g0.get("kind", "capped"), float(self.g0.get("q", 0.5)))

    def bulk_density(self) -> BulkDensity:
        return BulkDensity(self.psi.get("kind", "power"), float(self.psi.get("p", 2.0)))

    def surface_density(self) -> SurfaceDensity:
        return SurfaceDensity(self.g.get("kind", "g0"), self.modulus(), float(self.g.get("alpha", 1.0)))

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(psi=self.bulk_density(), g0=self.modulus(), g=self.surface_density(),
                              n_zeta=self.n_zeta, seed=self.seed, **self.pipeline)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def write_plot_data(path: Path, xs, ys) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{_fmt(x)} {_fmt(y)}\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _pairs_header(m: int) -> list[str]:
    cols = [f"u{i}_{c}" for i in range(3) for c in range(m)]
    cols += [f"s{i}{j}_{c}" for i, j in ((0, 1), (0, 2), (1, 2)) for c in range(m)]
    cols += [f"G{j}_{c}_{d}" for j in range(3) for c in range(m) for d in "xy"]
    return cols


def cmd_project(cfg: ExperimentConfig, out: Path) -> dict:
    f = cfg.build_field()
    poly = cfg.region()
    rng = np.random.default_rng(cfg.seed)
    zeta = sample_shift(cfg.eps, rng, 2)
    pw = project(f, cfg.eps, zeta, poly)
    m = pw.m
    header = ["cell", "cube_i", "cube_j", "tag", "x0", "y0", "x1", "y1", "x2", "y2"] + _pairs_header(m)

    def rows():
        for r in range(len(pw)):
            v = pw.vertices[r]
            s = pw.s[r]
            yield ([r, *pw.cubes[r], pw.tags[r], *v.ravel(), *pw.u[r].ravel(),
                    *s[0, 1], *s[0, 2], *s[1, 2], *pw.G[r].ravel()])

    n_cells = write_csv(out / "cells.csv", header, rows())
    faces = pw.jump_faces(poly)
    fh = ["face", "cell", "p0x", "p0y", "p1x", "p1y"] + [f"j0_{c}" for c in range(m)] + \
        [f"j1_{c}" for c in range(m)] + ["nux", "nuy", "length"]
    L = faces.lengths

    def frows():
        for k in range(len(faces)):
            row = -1 if faces.row is None else faces.row[k]
            yield [k, row, *faces.p0[k], *faces.p1[k], *faces.j0[k], *faces.j1[k], *faces.nu[k], L[k]]

    n_faces = write_csv(out / "faces.csv", fh, frows())
    return {"cells": n_cells, "faces": n_faces, "zeta": [float(z) for z in zeta]}


CANDIDATE_COLUMNS = ["level", "candidate", "zeta_x", "zeta_y", "l1", "lp_grad", "d1", "d2", "hn1_sym_diff", "selected"]


def cmd_converge(cfg: ExperimentConfig, out: Path) -> dict:
    f = cfg.build_field()
    poly = cfg.region()
    pcfg = cfg.pipeline_config()
    results = run_convergence(f, poly, cfg.ladder, pcfg, cfg.ladder_kind, cfg.theta)
    write_csv(out / "converge.csv", ROW_COLUMNS, ([o.row[c] for c in ROW_COLUMNS] for o in results))
    if cfg.candidates:
        rows = []
        for o in results:
            if o.result is None:
                continue
            sel = o.result.params["zeta"]
            for i, (z, m) in enumerate(o.result.candidates):
                vals = [math.nan] * 5 if m is None else [m.l1_distance, m.lp_grad_distance, m.g0_jump_discrepancy,
                                                         m.normal_discrepancy, m.hn1_sym_diff]
                chosen = m is not None and [float(v) for v in z] == sel
                rows.append([o.level, i, float(z[0]), float(z[1]), *vals, chosen])
        write_csv(out / "candidates.csv", CANDIDATE_COLUMNS, rows)
    xs = [o.level for o in results]
    for col in ROW_COLUMNS:
        if col in ("level", "error"):
            continue
        write_plot_data(out / "plot" / f"{col}.dat", xs, [o.row[col] for o in results])
    failed = [o.error for o in results if o.error]
    return {"levels": len(results), "failed": len(failed)}


REFLECT_COLUMNS = ["gamma", "collar_width", "involution_residual", "boundary_residual", "ratio_min", "ratio_max",
                   "lipschitz_constant"]


def cmd_reflect(cfg: ExperimentConfig, out: Path) -> dict:
    d = cfg.lipschitz_domain()
    rng = np.random.default_rng(cfg.seed)
    c = build_reflection(d, cfg.reflect.get("width"), rng=rng)
    y = c.sample_collar(2000, rng)
    inv = float(np.abs(c.reflect(c.reflect(y)) - y).max())
    bp = d.arclength_point(rng.uniform(0, d.perimeter, 500))
    bres = float(np.abs(c.reflect(bp) - bp).max())
    r = bilipschitz_ratios(c, rng, int(cfg.reflect.get("pairs", 10_000)))
    L = float(max(r.max(), 1 / r.min()))
    write_csv(out / "reflect.csv", REFLECT_COLUMNS,
              [[c.psi.gamma, c.width, inv, bres, float(r.min()), float(r.max()), L]])
    counts, edges = np.histogram(r, bins=int(cfg.reflect.get("bins", 20)))
    write_csv(out / "reflect_histogram.csv", ["ratio_lo", "ratio_hi", "count"],
              ([edges[i], edges[i + 1], counts[i]] for i in range(len(counts))))
    return {"gamma": c.psi.gamma, "lipschitz_constant": L}


ENERGY_COLUMNS = ["object", "eps", "bulk", "surface", "g0_energy", "total_variation", "area", "jump_variation",
                  "energy"]


def cmd_energy(cfg: ExperimentConfig, out: Path) -> dict:
    f = cfg.build_field()
    poly = cfg.region()
    pcfg = cfg.pipeline_config()
    ref = field_reference(f, poly, pcfg)
    rows = [["field", math.nan, ref.bulk, ref.surface, ref.g0_energy, ref.total_variation, ref.area,
             ref.jump_variation, ref.energy]]
    rng = np.random.default_rng(cfg.seed)
    pw = project(f, cfg.eps, sample_shift(cfg.eps, rng, 2), poly)
    faces = pw.jump_faces(poly)
    bulk = bulk_energy(pw, pcfg.psi, poly)
    surf = surface_energy(faces, pcfg.g)
    tv, area, jv = strict_metrics(pw, poly)
    rows.append(["projection", cfg.eps, bulk, surf, faces_g0_energy(faces, pcfg.g0), tv, area, jv, bulk + surf])
    write_csv(out / "energy.csv", ENERGY_COLUMNS, rows)
    return {"field_energy": ref.energy, "projection_energy": bulk + surf}


def cmd_catalog(cfg: ExperimentConfig | None, out: Path) -> dict:
    rows = [["field", name, json.dumps(defaults, sort_keys=True)] for name, (_, defaults) in sorted(PRESETS.items())]
    rows += [["psi", "power", json.dumps({"p": 2.0})], ["psi", "area", "{}"]]
    rows += [["g", "g0", "{}"], ["g", "constant", json.dumps({"alpha": 1.0})], ["g", "anisotropic", "{}"]]
    rows += [["g0", "power", json.dumps({"q": 0.5})], ["g0", "capped", json.dumps({"q": 0.5})]]
    write_csv(out / "catalog.csv", ["category", "name", "defaults"], rows)
    for r in rows:
        print("\t".join(r))
    return {"entries": len(rows)}


COMMANDS = {"project": cmd_project, "converge": cmd_converge, "reflect": cmd_reflect, "energy": cmd_energy,
            "catalog": cmd_catalog}


def load_config(path: str | None, seed: int | None) -> ExperimentConfig:
    if path is None:
        raise ConfigError("--config is required for this subcommand")
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sbvapprox", description="Piecewise-affine approximation of SBV fields.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="output directory (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "catalog":
            cfg = load_config(args.config, args.seed) if args.config else None
        else:
            cfg = load_config(args.config, args.seed)
            cfg.region()
            cfg.build_field()
        out = Path(args.out or (cfg.output if cfg else "out"))
        summary = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScaleError, DegenerateSlice, ReflectionError, DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
