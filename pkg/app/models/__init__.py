"""Domain models of the media, kernels and solver states."""

from app.models.coefficient import CoefficientField  # noqa: F401
from app.models.enums import (  # noqa: F401
    BoundaryCondition,
    CoefficientKind,
    ExperimentKind,
    HessianStencil,
    InitialProfile,
    ReusePolicy,
    TensorProvenance,
)
from app.models.kernel import Kernel  # noqa: F401
from app.models.macro import MacroState, QuadraticFitBatch, Snapshot, Trajectory  # noqa: F401
from app.models.micro import MicroField, MicroProblemSpec, QuadraticPoly  # noqa: F401
from app.models.reference import HomogenizedTensor, InvariantMeasure  # noqa: F401

__all__ = [
    "CoefficientField",
    "BoundaryCondition",
    "CoefficientKind",
    "ExperimentKind",
    "HessianStencil",
    "InitialProfile",
    "ReusePolicy",
    "TensorProvenance",
    "Kernel",
    "MacroState",
    "QuadraticFitBatch",
    "Snapshot",
    "Trajectory",
    "MicroField",
    "MicroProblemSpec",
    "QuadraticPoly",
    "HomogenizedTensor",
    "InvariantMeasure",
]
