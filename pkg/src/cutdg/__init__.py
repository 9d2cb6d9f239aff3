"""Stabilised cut discontinuous Galerkin methods for advection-reaction on implicit surfaces."""

from .analysis import ManufacturedProblem, diagnostics, eoc, error_norms, manufactured
from .assembly import PenaltyParameters, assemble, compute_scalings
from .geometry import build_geometry, reconstruct
from .harness import ExperimentConfig, load_config
from .levelset import CustomLevelSet, Plane, Sphere, Torus, make_levelset
from .mesh import build_grid, refine_counts, shift_mesh
from .solver import estimate_condition, solve
from .space import DGSpace

__all__ = [
    "CustomLevelSet", "DGSpace", "ExperimentConfig", "ManufacturedProblem", "PenaltyParameters",
    "Plane", "Sphere", "Torus", "assemble", "build_geometry", "build_grid", "compute_scalings",
    "diagnostics", "eoc", "error_norms", "estimate_condition", "load_config", "make_levelset",
    "manufactured", "reconstruct", "refine_counts", "shift_mesh", "solve",
]
