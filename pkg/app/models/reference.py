"""Reference quantities: homogenized tensors and invariant measures."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.models.enums import TensorProvenance


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    """Constant effective tensor A0 and where it came from.

    ``resolution`` is the quadrature grid (points per axis) used, when computed.
    """

    a0: np.ndarray
    provenance: TensorProvenance
    resolution: Optional[int] = None

    def __post_init__(self) -> None:
        a0 = np.atleast_2d(np.array(self.a0, dtype=float))
        if a0.shape[0] != a0.shape[1] or not np.array_equal(a0, a0.T):
            raise ValueError("a0 must be a symmetric matrix")
        if np.linalg.eigvalsh(a0).min() <= 0:
            raise ValueError("a0 must be positive definite")
        a0.setflags(write=False)
        object.__setattr__(self, "a0", a0)

    @property
    def dim(self) -> int:
        return self.a0.shape[0]

    @property
    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.a0, 2))


@dataclass(frozen=True, eq=False)
class InvariantMeasure:
    """Density rho on the unit cell, sampled on an N^d periodic grid, mean one."""

    rho: np.ndarray
    residual: float

    @property
    def resolution(self) -> int:
        return self.rho.shape[0]

    @property
    def dim(self) -> int:
        return self.rho.ndim

    @property
    def mean(self) -> float:
        return float(self.rho.mean())
