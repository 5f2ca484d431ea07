"""Micro problem models: lifted polynomial data, problem setup and solution samples."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from app.models.coefficient import CoefficientField


@dataclass(frozen=True, eq=False)
class QuadraticPoly:
    """u(x) = c0 + grad . (x - center) + (x - center)^T hess (x - center) / 2."""

    center: np.ndarray
    c0: float
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self) -> None:
        center = np.atleast_1d(np.array(self.center, dtype=float))
        grad = np.atleast_1d(np.array(self.grad, dtype=float))
        hess = np.atleast_2d(np.array(self.hess, dtype=float))
        d = center.size
        if center.shape != (d,) or grad.shape != (d,) or hess.shape != (d, d):
            raise ValueError("center, grad and hess dimensions disagree")
        if not np.array_equal(hess, hess.T):
            raise ValueError("hess must be symmetric")
        for name, arr in (("center", center), ("grad", grad), ("hess", hess)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "c0", float(self.c0))

    @classmethod
    def from_hessian(cls, hess, center=None) -> "QuadraticPoly":
        """Pure quadratic with the given Hessian, zero value and slope at center."""
        hess = np.atleast_2d(np.asarray(hess, dtype=float))
        d = hess.shape[0]
        center = np.zeros(d) if center is None else center
        return cls(center=center, c0=0.0, grad=np.zeros(d), hess=hess)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def laplacian(self) -> float:
        return float(np.trace(self.hess))

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinate arrays")
        shifts = [np.asarray(x, dtype=float) - c for x, c in zip(coords, self.center)]
        value = self.c0 + sum(g * s for g, s in zip(self.grad, shifts))
        for i in range(self.dim):
            value = value + 0.5 * self.hess[i, i] * shifts[i] ** 2
            for j in range(i + 1, self.dim):
                value = value + self.hess[i, j] * shifts[i] * shifts[j]
        return value

    def __add__(self, other: "QuadraticPoly") -> "QuadraticPoly":
        if not np.array_equal(self.center, other.center):
            raise ValueError("polynomials must share their expansion point")
        return QuadraticPoly(
            center=self.center,
            c0=self.c0 + other.c0,
            grad=self.grad + other.grad,
            hess=self.hess + other.hess,
        )

    def scaled(self, factor: float) -> "QuadraticPoly":
        return QuadraticPoly(
            center=self.center,
            c0=factor * self.c0,
            grad=factor * self.grad,
            hess=factor * self.hess,
        )


@dataclass(frozen=True, eq=False)
class MicroProblemSpec:
    """
    Discretized micro problem around ``uhat.center``.

    The box is the periodic cube center + [-ell, ell)^d with 2 * cells nodes
    per axis. The averaging window holds the 2 * window_cells + 1 central
    nodes per axis and the run covers ``steps`` time steps of ``dt_micro``,
    i.e. t in [0, tau / 2].
    """

    field: CoefficientField
    uhat: QuadraticPoly
    eta: float
    tau: float
    ell: float
    dx_micro: float
    dt_micro: float
    cells: int
    window_cells: int
    steps: int

    @property
    def dim(self) -> int:
        return self.field.dim

    @property
    def nodes_per_axis(self) -> int:
        return 2 * self.cells

    def axis(self, i: int) -> np.ndarray:
        """Box nodes along axis i, the center sits at index ``cells``."""
        return self.uhat.center[i] + self.dx_micro * np.arange(-self.cells, self.cells)

    def window_slice(self) -> slice:
        return slice(self.cells - self.window_cells, self.cells + self.window_cells + 1)

    def window_offsets(self) -> np.ndarray:
        return self.dx_micro * np.arange(-self.window_cells, self.window_cells + 1)

    def widened(self, factor: int) -> "MicroProblemSpec":
        """Same problem on a box ``factor`` times wider."""
        cells = self.cells * factor
        return replace(self, cells=cells, ell=cells * self.dx_micro)


@dataclass(frozen=True, eq=False)
class MicroField:
    """
    Micro solution sampled on the averaging window for t in [-tau/2, tau/2].

    Negative times are mirror images of positive ones. ``u`` and ``flux``
    have shape (len(times), *window) with the window axes in ``axes``.
    """

    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    u: np.ndarray
    flux: np.ndarray
    dx: float
    dt: float
    center: np.ndarray
    spec: Optional[MicroProblemSpec] = None

    @property
    def steps(self) -> int:
        return (len(self.times) - 1) // 2

    def at_time(self, n: int) -> np.ndarray:
        """Flux integrand at time level n (may be negative)."""
        return self.flux[self.steps + n]
