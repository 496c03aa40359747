"""Coupled thermo-visco-elastic simulator with balance-law diagnostics."""

from .constitutive import (
    ElasticityTensor,
    FlowRule,
    TruncationLevel,
    elasticity_apply,
    elasticity_inverse_apply,
    flow_eval,
    truncate,
    verify_admissibility,
)
from .discretization import (
    FieldCoefficients,
    GalerkinSystem,
    Mesh,
    build_mesh,
    build_spaces,
    project_displacement,
    project_stress,
    strain,
)
from .solver import SimState, SolverConfig, initialize, run, step

__all__ = [
    "ElasticityTensor",
    "FlowRule",
    "TruncationLevel",
    "elasticity_apply",
    "elasticity_inverse_apply",
    "flow_eval",
    "truncate",
    "verify_admissibility",
    "FieldCoefficients",
    "GalerkinSystem",
    "Mesh",
    "build_mesh",
    "build_spaces",
    "project_displacement",
    "project_stress",
    "strain",
    "SimState",
    "SolverConfig",
    "initialize",
    "run",
    "step",
]

__version__ = "0.1.0"
