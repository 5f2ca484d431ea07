"""Media models.

A coefficient field is stored in the separable form

    A^eps(x) = slow(x) * cell(x / eps) * D

where ``cell`` is a positive scalar function of the fast variable, ``slow`` an
optional positive scalar modulation (locally periodic media) and ``D`` a
constant symmetric positive definite matrix (the identity for isotropic media).
Every builtin medium fits this form, which also gives the homogenized tensor
in closed form once the harmonic mean of ``cell`` is known.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from app.models.enums import CoefficientKind

CellFunction = Callable[..., np.ndarray]

# Extent sampled along axes without a finite period (almost periodic media)
APERIODIC_SAMPLE_EXTENT = 100.0
MAX_SAMPLES_PER_AXIS = {1: 2_000_000, 2: 2048}


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Evaluable heterogeneous medium with known ellipticity bounds.

    Attributes:
        name: Registry name the field was built from
        dim: Spatial dimension (1 or 2)
        epsilon: Microscale wavelength
        kind: Structure tag
        cell: Scalar function of the fast variable y = x / epsilon
        tensor: Constant symmetric matrix D
        lower_bound: c1, lower ellipticity bound
        upper_bound: c2, upper ellipticity bound
        slow: Optional 1-periodic scalar modulation in x
        cell_period: Period of ``cell`` per axis, None when not periodic
        params: Parameters the field was built with
    """

    name: str
    dim: int
    epsilon: float
    kind: CoefficientKind
    cell: CellFunction
    tensor: np.ndarray
    lower_bound: float
    upper_bound: float
    slow: Optional[CellFunction] = None
    cell_period: Optional[tuple[float, ...]] = None
    params: tuple[tuple[str, float], ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        tensor = np.array(self.tensor, dtype=float)
        if tensor.shape != (self.dim, self.dim):
            raise ValueError(f"tensor must be {self.dim}x{self.dim}")
        if not np.array_equal(tensor, tensor.T):
            raise ValueError("tensor must be symmetric")
        tensor.setflags(write=False)
        object.__setattr__(self, "tensor", tensor)
        if not 0 < self.lower_bound <= self.upper_bound:
            raise ValueError("bounds must satisfy 0 < c1 <= c2")

    @property
    def is_diagonal(self) -> bool:
        return bool(np.count_nonzero(self.tensor - np.diag(np.diag(self.tensor))) == 0)

    def profile(self, *coords: np.ndarray) -> np.ndarray:
        """Scalar factor slow(x) * cell(x / eps) on broadcast coordinate arrays."""
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinate arrays, got {len(coords)}")
        xs = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast_shapes(*(x.shape for x in xs))
        values = np.broadcast_to(self.cell(*(x / self.epsilon for x in xs)), shape)
        if self.slow is not None:
            values = self.slow(*xs) * values
        return np.array(values, dtype=float)

    def components(self, *coords: np.ndarray) -> np.ndarray:
        """Matrix entries A_ij on a grid, shape (d, d, *grid)."""
        values = self.profile(*coords)
        expand = (slice(None), slice(None)) + (None,) * values.ndim
        return self.tensor[expand] * values

    def eval(self, x) -> np.ndarray:
        """A^eps at a single point, a fresh symmetric d x d array."""
        point = np.atleast_1d(np.asarray(x, dtype=float))
        if point.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} coordinates")
        value = float(self.profile(*point))
        return value * np.array(self.tensor)

    def spectral_max(self, samples_per_unit: int) -> float:
        """Largest sampled spectral norm of A^eps.

        The cell is sampled over one period per axis (``APERIODIC_SAMPLE_EXTENT``
        cell units when aperiodic) with ``samples_per_unit`` points per cell
        unit; the slow factor over [0, 1]^d. Since both factors are positive,
        the product of the two maxima bounds every sampled value of
        |slow * cell|, and the spectral norm of D scales it.
        """
        key = ("spectral_max", samples_per_unit)
        if key not in self._cache:
            cell_max = _sample_max(
                self.cell,
                self.cell_period or (APERIODIC_SAMPLE_EXTENT,) * self.dim,
                samples_per_unit,
            )
            slow_max = 1.0
            if self.slow is not None:
                slow_max = _sample_max(self.slow, (1.0,) * self.dim, samples_per_unit)
            self._cache[key] = cell_max * slow_max * float(np.linalg.norm(self.tensor, 2))
        return self._cache[key]

    def param(self, name: str, default: Optional[float] = None) -> Optional[float]:
        return dict(self.params).get(name, default)


def _sample_max(fn: CellFunction, extent: tuple[float, ...], samples_per_unit: int) -> float:
    dim = len(extent)
    cap = MAX_SAMPLES_PER_AXIS[dim]
    axes = []
    for length in extent:
        n = min(int(np.ceil(length * samples_per_unit)), cap)
        axes.append(np.linspace(0.0, length, n, endpoint=False))
    grid = np.meshgrid(*axes, indexing="ij")
    values = np.broadcast_to(fn(*grid), grid[0].shape)
    return float(np.max(np.abs(values)))
