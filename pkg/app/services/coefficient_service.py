"""
Coefficient Service - builtin media models and their norms.

Every builtin is registered under a string name used by experiment files.
Factories take the microscale ``epsilon`` plus optional numeric parameters
and return an immutable CoefficientField.
"""
from fractions import Fraction
from typing import Callable, Dict, Optional

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.models.coefficient import CoefficientField
from app.models.enums import CoefficientKind

logger = structlog.get_logger(__name__)

TWO_PI = 2.0 * np.pi
SQRT2 = float(np.sqrt(2.0))

# Samples per axis used to bound media without closed-form extrema
BOUND_SAMPLES_2D = 512
BOUND_SAFETY = 0.01

Factory = Callable[..., CoefficientField]
_REGISTRY: Dict[str, Factory] = {}


def register(name: str) -> Callable[[Factory], Factory]:
    """Register a coefficient factory under ``name``."""
    def decorator(factory: Factory) -> Factory:
        _REGISTRY[name] = factory
        return factory
    return decorator


def available_coefficients() -> list[str]:
    return sorted(_REGISTRY)


def builtin_coefficient(name: str, epsilon: float, **params: float) -> CoefficientField:
    """
    Build a registered medium.

    Args:
        name: Registry name, e.g. ``per1d_sin`` or ``aniso2d``
        epsilon: Microscale wavelength
        **params: Factory parameters (``alpha``, ``c``, ``ratio``, ``dim``)

    Returns:
        The coefficient field

    Raises:
        ConfigurationError: Unknown name, bad parameters or epsilon <= 0
    """
    factory = _REGISTRY.get(name)
    if factory is None:
        raise ConfigurationError(
            f"unknown coefficient {name!r}; available: {', '.join(available_coefficients())}"
        )
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    try:
        field = factory(epsilon, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for coefficient {name!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"invalid coefficient {name!r}: {exc}") from exc
    logger.debug(
        "coefficient_built",
        name=name,
        epsilon=epsilon,
        c1=field.lower_bound,
        c2=field.upper_bound,
        cell_period=field.cell_period,
    )
    return field


def sup_norm(field: CoefficientField) -> float:
    """|A|_inf estimated by dense sampling and inflated by SUP_NORM_INFLATION."""
    return settings.SUP_NORM_INFLATION * field.spectral_max(settings.SUP_NORM_SAMPLES_PER_UNIT)


def rational_period(ratio: float) -> Optional[float]:
    """Common period of cos(2 pi ratio y) and cos(2 pi y), None if incommensurate.

    Ratios that are decimal fractions with a small denominator (1.41 = 141/100)
    give a finite period equal to the reduced denominator.
    """
    frac = Fraction(ratio).limit_denominator(1000)
    if abs(float(frac) - ratio) > 1e-12:
        return None
    return float(frac.denominator)


def anisotropic_matrix_cell(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """Full 2x2 periodic cell matrix used to exercise the invariant measure.

    Not of the separable form a(y) D, so the adjoint cell problem has a
    non-trivial solution. Returns shape (2, 2, *grid).
    """
    a11 = 2.0 + np.sin(TWO_PI * y1) * np.cos(TWO_PI * y2)
    a22 = 2.0 + np.cos(TWO_PI * y1) + 0.0 * y2
    a12 = 0.3 * np.sin(TWO_PI * (y1 + y2))
    return np.array([[a11, a12], [a12, a22]])


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------

@register("constant")
def constant(epsilon: float, c: float = 1.0, dim: float = 1) -> CoefficientField:
    dim = int(dim)
    if not c > 0:
        raise ValueError("c must be positive")
    return CoefficientField(
        name="constant",
        dim=dim,
        epsilon=epsilon,
        kind=CoefficientKind.CONSTANT,
        cell=lambda *y: np.full(np.shape(y[0]), float(c)),
        tensor=np.eye(dim),
        lower_bound=float(c),
        upper_bound=float(c),
        cell_period=(1.0,) * dim,
        params=(("c", float(c)), ("dim", float(dim))),
    )


@register("per1d_sin")
def per1d_sin(epsilon: float, alpha: float = 1.1) -> CoefficientField:
    """alpha + sin(2 pi x / eps); exact bounds alpha -/+ 1."""
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    return CoefficientField(
        name="per1d_sin",
        dim=1,
        epsilon=epsilon,
        kind=CoefficientKind.PERIODIC,
        cell=lambda y: alpha + np.sin(TWO_PI * y),
        tensor=np.eye(1),
        lower_bound=alpha - 1.0,
        upper_bound=alpha + 1.0,
        cell_period=(1.0,),
        params=(("alpha", float(alpha)),),
    )


@register("locper1d")
def locper1d(epsilon: float) -> CoefficientField:
    """(1.5 + sin(2 pi x)) (1.5 + sin(2 pi x / eps)); bounds 0.25 and 6.25."""
    return CoefficientField(
        name="locper1d",
        dim=1,
        epsilon=epsilon,
        kind=CoefficientKind.LOCALLY_PERIODIC,
        cell=lambda y: 1.5 + np.sin(TWO_PI * y),
        slow=lambda x: 1.5 + np.sin(TWO_PI * x),
        tensor=np.eye(1),
        lower_bound=0.25,
        upper_bound=6.25,
        cell_period=(1.0,),
    )


@register("almostper1d_exp")
def almostper1d_exp(epsilon: float, ratio: float = SQRT2) -> CoefficientField:
    """1/4 exp(sin(2 pi r x / eps) + sin(2 pi x / eps)); bounds e^-2 / 4 and e^2 / 4."""
    period = rational_period(ratio)
    return CoefficientField(
        name="almostper1d_exp",
        dim=1,
        epsilon=epsilon,
        kind=CoefficientKind.ALMOST_PERIODIC,
        cell=lambda y: 0.25 * np.exp(np.sin(TWO_PI * ratio * y) + np.sin(TWO_PI * y)),
        tensor=np.eye(1),
        lower_bound=0.25 * np.exp(-2.0),
        upper_bound=0.25 * np.exp(2.0),
        cell_period=(period,) if period else None,
        params=(("ratio", float(ratio)),),
    )


@register("almostper1d_cos")
def almostper1d_cos(epsilon: float, ratio: float = SQRT2) -> CoefficientField:
    """3/2 + (cos(2 pi r x / eps) + cos(2 pi x / eps)) / 2; bounds 0.5 and 2.5."""
    period = rational_period(ratio)
    return CoefficientField(
        name="almostper1d_cos",
        dim=1,
        epsilon=epsilon,
        kind=CoefficientKind.ALMOST_PERIODIC,
        cell=lambda y: 1.5 + 0.5 * (np.cos(TWO_PI * ratio * y) + np.cos(TWO_PI * y)),
        tensor=np.eye(1),
        lower_bound=0.5,
        upper_bound=2.5,
        cell_period=(period,) if period else None,
        params=(("ratio", float(ratio)),),
    )


def _per2d_exp_cell(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    c1 = np.cos(TWO_PI * y1)
    s2 = np.sin(TWO_PI * y2)
    return 1.0 / (1.1 + c1 * s2 + np.exp(c1 + s2))


@register("per2d_exp")
def per2d_exp(epsilon: float) -> CoefficientField:
    """(1.1 + cos(2 pi x1/eps) sin(2 pi x2/eps) + exp(cos + sin))^-1 I.

    Bounds come from a 512 x 512 sample of the unit cell, widened by 1%.
    """
    axis = np.linspace(0.0, 1.0, BOUND_SAMPLES_2D, endpoint=False)
    samples = _per2d_exp_cell(*np.meshgrid(axis, axis, indexing="ij"))
    return CoefficientField(
        name="per2d_exp",
        dim=2,
        epsilon=epsilon,
        kind=CoefficientKind.PERIODIC,
        cell=_per2d_exp_cell,
        tensor=np.eye(2),
        lower_bound=float(samples.min()) * (1.0 - BOUND_SAFETY),
        upper_bound=float(samples.max()) * (1.0 + BOUND_SAFETY),
        cell_period=(1.0, 1.0),
    )


@register("aniso2d")
def aniso2d(epsilon: float, c: float = 0.5, ratio: float = SQRT2) -> CoefficientField:
    """
    (1/3)(3/2 + sin(2 pi x1/eps))(3/2 + (cos(2 pi r x1/eps) + cos(2 pi x2/eps))/2) D
    with D = [[1, c], [c, 1]].

    The scalar factor ranges over [1/12, 25/12] and the eigenvalues of D are
    1 -/+ |c|, which gives the bounds.
    """
    if not abs(c) < 1:
        raise ValueError("|c| must be below 1")
    period = rational_period(ratio)

    def cell(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        return (
            (1.5 + np.sin(TWO_PI * y1))
            * (1.5 + 0.5 * (np.cos(TWO_PI * ratio * y1) + np.cos(TWO_PI * y2)))
            / 3.0
        )

    return CoefficientField(
        name="aniso2d",
        dim=2,
        epsilon=epsilon,
        kind=CoefficientKind.ALMOST_PERIODIC,
        cell=cell,
        tensor=np.array([[1.0, c], [c, 1.0]]),
        lower_bound=(1.0 - abs(c)) / 12.0,
        upper_bound=(1.0 + abs(c)) * 25.0 / 12.0,
        cell_period=(period, 1.0) if period else None,
        params=(("c", float(c)), ("ratio", float(ratio))),
    )
