"""Piecewise-affine approximation of SBV fields in the plane."""

from .boundary import CollarReflection, LipschitzDomain, build_reflection, extend_field
from .energy import BulkDensity, MetricsRecord, SurfaceDensity, jump_discrepancy, strict_metrics
from .field import Modulus, SbvField, StackedLines, make_preset
from .mesh import GridPlacement, Simplex
from .pipeline import (
    PipelineConfig,
    analyze_scale,
    assemble_approximant,
    build_deformation,
    linearize_interface,
    run_convergence,
    select_shift,
)
from .projector import JumpFaceInventory, PwAffineFunction, project

__all__ = [
    "BulkDensity", "CollarReflection", "GridPlacement", "JumpFaceInventory", "LipschitzDomain", "MetricsRecord",
    "Modulus", "PipelineConfig", "PwAffineFunction", "SbvField", "Simplex", "StackedLines", "SurfaceDensity",
    "analyze_scale", "assemble_approximant", "build_deformation", "build_reflection", "extend_field",
    "jump_discrepancy", "linearize_interface", "make_preset", "project", "run_convergence", "select_shift",
    "strict_metrics",
]
