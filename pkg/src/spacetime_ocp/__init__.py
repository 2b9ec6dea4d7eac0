"""Matrix-free space-time finite elements for state-constrained parabolic
optimal control with an anisotropic H^{1,1/2} regularization."""
from .newton import BoxConstraints, NewtonConfig, newton_solve
from .operator import (SystemOperator, anisotropic_norm_sq, apply_energy_operator,
                       apply_operator, assemble_load_vector, build_operator,
                       recover_control)
from .spatial import build_structured_mesh
from .temporal import TemporalMesh

__all__ = [
    "BoxConstraints", "NewtonConfig", "newton_solve", "SystemOperator",
    "anisotropic_norm_sq", "apply_energy_operator", "apply_operator",
    "assemble_load_vector", "build_operator", "recover_control",
    "build_structured_mesh", "TemporalMesh",
]
