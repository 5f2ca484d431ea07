"""
Finite difference stencils shared by the micro, DNS and macro solvers.

All operators act on node arrays with periodic wrap-around. Dirichlet
problems keep their boundary nodes at zero, so interior nodes never read a
wrapped value and the caller only has to reset the boundary after a step.
"""
import numpy as np

from app.models.enums import BoundaryCondition


def second_difference(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(u[i+1] - 2 u[i] + u[i-1]) / h^2 along ``axis``."""
    return (np.roll(u, -1, axis) - 2.0 * u + np.roll(u, 1, axis)) / (h * h)


def cross_difference(u: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    """(u[+,+] - u[+,-] - u[-,+] + u[-,-]) / (4 h^2) on axes i and j."""
    plus = np.roll(u, -1, j)
    minus = np.roll(u, 1, j)
    return (
        np.roll(plus, -1, i) - np.roll(minus, -1, i) - np.roll(plus, 1, i) + np.roll(minus, 1, i)
    ) / (4.0 * h * h)


def first_difference(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2.0 * h)


def hessian(u: np.ndarray, h: float) -> np.ndarray:
    """Centered Hessian estimate, shape (d, d, *u.shape)."""
    d = u.ndim
    out = np.empty((d, d) + u.shape)
    for i in range(d):
        out[i, i] = second_difference(u, i, h)
        for j in range(i + 1, d):
            out[i, j] = out[j, i] = cross_difference(u, i, j, h)
    return out


class CoefficientOperator:
    """
    u -> A : grad^2_h u for a symmetric coefficient sampled on the grid.

    Entries that vanish identically are dropped once at construction.

    Args:
        components: A_ij on the grid, shape (d, d, *grid); constant tensors
            may be passed with trailing singleton axes
        h: Grid spacing
    """

    def __init__(self, components: np.ndarray, h: float):
        self.h = h
        self.dim = components.shape[0]
        self.terms: list[tuple[int, int, np.ndarray]] = []
        for i in range(self.dim):
            if np.any(components[i, i]):
                self.terms.append((i, i, components[i, i]))
            for j in range(i + 1, self.dim):
                if np.any(components[i, j]):
                    self.terms.append((i, j, 2.0 * components[i, j]))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        result = np.zeros(u.shape)
        for i, j, coef in self.terms:
            if i == j:
                result += coef * second_difference(u, i, self.h)
            else:
                result += coef * cross_difference(u, i, j, self.h)
        return result


def enforce_boundary(u: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    """Zero the boundary faces in place for homogeneous Dirichlet conditions."""
    if bc is BoundaryCondition.DIRICHLET_ZERO:
        for axis in range(u.ndim):
            index = [slice(None)] * u.ndim
            index[axis] = 0
            u[tuple(index)] = 0.0
            index[axis] = -1
            u[tuple(index)] = 0.0
    return u


def grid_axes(length: float, n_cells: int, dim: int, bc: BoundaryCondition) -> tuple[np.ndarray, ...]:
    """Node coordinates per axis: n_cells nodes for periodic grids, n_cells + 1 for Dirichlet."""
    h = length / n_cells
    count = n_cells if bc is BoundaryCondition.PERIODIC else n_cells + 1
    axis = h * np.arange(count)
    return tuple(axis for _ in range(dim))


def interior_mask(shape: tuple[int, ...], bc: BoundaryCondition) -> np.ndarray:
    """Boolean mask of the nodes that are time stepped."""
    return enforce_boundary(np.ones(shape), bc).astype(bool)
