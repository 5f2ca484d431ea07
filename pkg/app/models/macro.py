"""Macro grid models: fitted data, solver state and recorded trajectories."""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from app.models.enums import BoundaryCondition
from app.models.micro import QuadraticPoly


@dataclass(frozen=True, eq=False)
class QuadraticFitBatch:
    """Quadratic fits at a set of grid nodes.

    Attributes:
        indices: Flat (row-major) node indices, shape (n,)
        points: Node coordinates, shape (n, d)
        c0: Fitted values, shape (n,)
        grad: Fitted gradients, shape (n, d)
        hess: Fitted Hessians, shape (n, d, d)
    """

    indices: np.ndarray
    points: np.ndarray
    c0: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def poly(self, k: int) -> QuadraticPoly:
        return QuadraticPoly(
            center=self.points[k], c0=self.c0[k], grad=self.grad[k], hess=self.hess[k]
        )


@dataclass(frozen=True, eq=False)
class MacroState:
    """
    Two time levels of the macro leap-frog scheme.

    ``U_curr`` holds level n at time ``t``, ``U_prev`` level n - 1. A reversed
    state runs the same recursion backwards in time (``direction`` = -1).
    """

    dim: int
    length: float
    n_cells: int
    dt: float
    bc: BoundaryCondition
    U_curr: np.ndarray
    U_prev: np.ndarray
    t: float
    step: int
    direction: int = 1

    @property
    def H(self) -> float:
        return self.length / self.n_cells

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        count = self.U_curr.shape[0]
        return tuple(self.H * np.arange(count) for _ in range(self.dim))

    def reversed(self) -> "MacroState":
        """Swap the time levels; stepping then retraces the trajectory."""
        return replace(
            self,
            U_curr=self.U_prev,
            U_prev=self.U_curr,
            t=self.t - self.direction * self.dt,
            direction=-self.direction,
        )


@dataclass(frozen=True)
class Snapshot:
    t: float
    values: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """Recorded solution levels of a time-stepping run.

    ``snapshots`` are the requested output times; ``frames`` are the dense
    levels kept inside local averaging windows (DNS only).
    """

    axes: tuple[np.ndarray, ...]
    dt: float
    bc: BoundaryCondition
    snapshots: list[Snapshot] = field(default_factory=list)
    frames: list[Snapshot] = field(default_factory=list)
    energy: list[tuple[float, float]] = field(default_factory=list)
    final_state: Optional[MacroState] = None

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> float:
        return float(self.axes[0][1] - self.axes[0][0])

    def record(self, t: float, values: np.ndarray) -> None:
        self.snapshots.append(Snapshot(t=t, values=np.array(values, copy=True)))

    def at(self, t: float, atol: Optional[float] = None) -> Snapshot:
        """Snapshot recorded at time t (within half a step)."""
        tol = 0.5 * self.dt if atol is None else atol
        for snap in self.snapshots:
            if abs(snap.t - t) <= tol:
                return snap
        raise KeyError(f"no snapshot at t={t}")

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]
