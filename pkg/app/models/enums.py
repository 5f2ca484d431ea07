"""Enumerations used across models, schemas and services."""

import enum


class CoefficientKind(str, enum.Enum):
    """Structure of a media model."""
    PERIODIC = "periodic"
    LOCALLY_PERIODIC = "locally_periodic"
    ALMOST_PERIODIC = "almost_periodic"
    CONSTANT = "constant"


class BoundaryCondition(str, enum.Enum):
    """Macroscopic boundary conditions."""
    DIRICHLET_ZERO = "dirichlet_zero"
    PERIODIC = "periodic"


class ReusePolicy(str, enum.Enum):
    """How upscaled fluxes are reused across macro steps."""
    PER_CALL = "per_call"
    EFFECTIVE_TENSOR_CACHE = "effective_tensor_cache"


class TensorProvenance(str, enum.Enum):
    """Where a homogenized tensor came from."""
    HARMONIC_MEAN = "harmonic_mean"
    INVARIANT_MEASURE = "invariant_measure"
    LITERATURE_VALUE = "literature_value"


class HessianStencil(str, enum.Enum):
    """How macro second derivatives are estimated."""
    LEAST_SQUARES = "least_squares"
    CENTERED = "centered"


class ExperimentKind(str, enum.Enum):
    """Experiment families run by the harness."""
    UPSCALING = "upscaling"
    SOLUTION1D = "solution1d"
    SOLUTION2D = "solution2d"


class InitialProfile(str, enum.Enum):
    """Initial data presets for solution comparisons."""
    GAUSSIAN = "gaussian"
    STANDING_WAVE = "standing_wave"
    ZERO = "zero"
