"""
Micro Service - lifting, sizing and solving micro problems.

A micro problem is solved in the deviation w = u - uhat, which turns the
"u - uhat periodic" condition into plain periodic boundary conditions:

    w_tt = A : grad^2_h w + A : hess,   w(0) = 0,   w_t(0) = 0.

The quadratic uhat is evaluated analytically and never differenced.
"""
import math
from itertools import combinations_with_replacement
from typing import Iterator, Optional

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import (
    CFLViolationError,
    InstabilityError,
    PreconditionError,
    UpscalingError,
)
from app.models.coefficient import CoefficientField
from app.models.micro import MicroField, MicroProblemSpec, QuadraticPoly
from app.services.coefficient_service import sup_norm
from app.services.stencil import CoefficientOperator

logger = structlog.get_logger(__name__)


def quadratic_terms(dim: int) -> list[tuple[int, int]]:
    """Index pairs (i, j), i <= j, of the second-order monomials."""
    return list(combinations_with_replacement(range(dim), 2))


def quadratic_design(offsets: np.ndarray) -> np.ndarray:
    """
    Least-squares design matrix for integer patch offsets.

    Columns are 1, s_i, then s_i^2 / 2 for diagonal and s_i s_j for mixed
    terms, so the trailing coefficients are Hessian entries in grid units.

    Args:
        offsets: Patch offsets in grid units, shape (P, d)
    """
    offsets = np.asarray(offsets, dtype=float)
    columns = [np.ones(len(offsets))]
    columns.extend(offsets.T)
    for i, j in quadratic_terms(offsets.shape[1]):
        columns.append(0.5 * offsets[:, i] ** 2 if i == j else offsets[:, i] * offsets[:, j])
    return np.column_stack(columns)


def unpack_coefficients(coeffs: np.ndarray, dim: int, H: float) -> tuple:
    """Split fit coefficients (..., n_coef) into value, gradient and Hessian."""
    c0 = coeffs[..., 0]
    grad = coeffs[..., 1 : 1 + dim] / H
    hess = np.empty(coeffs.shape[:-1] + (dim, dim))
    for k, (i, j) in enumerate(quadratic_terms(dim)):
        hess[..., i, j] = hess[..., j, i] = coeffs[..., 1 + dim + k] / (H * H)
    return c0, grad, hess


def patch_offsets(m: int, dim: int) -> np.ndarray:
    """Offsets of the (2m+1)^d patch in row-major order, shape (P, d)."""
    grids = np.meshgrid(*([np.arange(-m, m + 1)] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def fit_quadratic(patch: np.ndarray, H: float, center) -> QuadraticPoly:
    """
    Least-squares quadratic through a centered macro patch.

    Args:
        patch: Values on the (2m+1)^d stencil centered at ``center``, m >= 1
        H: Macro grid spacing
        center: Coordinates of the patch center

    Returns:
        The lifted polynomial, exact for quadratic data

    Raises:
        PreconditionError: Malformed patch or non-finite values
        UpscalingError: Rank-deficient design
    """
    patch = np.asarray(patch, dtype=float)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = patch.ndim
    width = patch.shape[0]
    if center.size != dim or any(n != width for n in patch.shape) or width % 2 == 0 or width < 3:
        raise PreconditionError(f"patch of shape {patch.shape} is not a centered (2m+1)^d stencil")
    if not np.all(np.isfinite(patch)):
        raise PreconditionError("patch contains non-finite values")
    design = quadratic_design(patch_offsets(width // 2, dim))
    coeffs, _, rank, _ = np.linalg.lstsq(design, patch.ravel(), rcond=None)
    if rank < design.shape[1]:
        raise UpscalingError(f"rank-deficient quadratic fit (rank {rank})")
    c0, grad, hess = unpack_coefficients(coeffs, dim, H)
    return QuadraticPoly(center=center, c0=float(c0), grad=grad, hess=hess)


def size_micro_box(eta: float, tau: float, field: CoefficientField, dx: Optional[float] = None) -> float:
    """
    Half-width ell = eta/2 + (tau/2) sqrt(|A|_inf) of the micro box.

    Rounded up to a whole number of cells when ``dx`` is given.
    """
    if eta <= 0 or tau < 0:
        raise PreconditionError("need eta > 0 and tau >= 0")
    ell = 0.5 * eta + 0.5 * tau * math.sqrt(sup_norm(field))
    if dx is not None:
        ell = math.ceil(ell / dx - 1e-9) * dx
    return ell


def micro_time_step_limit(dx: float, field: CoefficientField) -> float:
    """Leap-frog stability limit dx / sqrt(d c2) for A : grad^2_h."""
    return dx / math.sqrt(field.dim * field.upper_bound)


def build_micro_spec(
    field: CoefficientField,
    uhat: QuadraticPoly,
    eta: float,
    tau: float,
    points_per_wavelength: Optional[int] = None,
) -> MicroProblemSpec:
    """
    Discretize the micro problem for one macro point.

    The window half-width eta/2 and the half time tau/2 are split into whole
    numbers of cells and steps. The box holds at least the physical domain
    of dependence and the discrete one, window_cells + steps + 1 cells, so
    the periodic wrap never reaches the window.

    Raises:
        PreconditionError: Fewer than 10 points per wavelength or bad window
    """
    if uhat.dim != field.dim:
        raise PreconditionError("uhat and field dimensions differ")
    if not (eta > 0 and tau > 0):
        raise PreconditionError("eta and tau must be positive")
    ppw = points_per_wavelength or settings.micro_points_per_wavelength(field.dim)
    if ppw < 10:
        raise PreconditionError(f"micro grid must resolve epsilon with >= 10 points, got {ppw}")

    half_eta = 0.5 * eta
    half_tau = 0.5 * tau
    window_cells = math.ceil(half_eta / (field.epsilon / ppw) - 1e-9)
    dx = half_eta / window_cells
    steps = math.ceil(half_tau / (settings.MICRO_CFL_FRACTION * micro_time_step_limit(dx, field)))
    dt = half_tau / steps

    ell = size_micro_box(eta, tau, field, dx)
    cells = max(round(ell / dx), window_cells + steps + 1)
    return MicroProblemSpec(
        field=field,
        uhat=uhat,
        eta=eta,
        tau=tau,
        ell=cells * dx,
        dx_micro=dx,
        dt_micro=dt,
        cells=cells,
        window_cells=window_cells,
        steps=steps,
    )


class MicroSolver:
    """
    Leap-frog solver for one micro problem.

    ``iterate`` streams (n, w, integrand) on the averaging window for
    n = 0 .. steps, where the integrand is A : (grad^2_h w + hess).

    Raises:
        CFLViolationError: dt_micro above the stability limit
    """

    def __init__(self, spec: MicroProblemSpec):
        dt_max = micro_time_step_limit(spec.dx_micro, spec.field)
        if spec.dt_micro >= dt_max:
            raise CFLViolationError(spec.dt_micro, dt_max, "micro")
        self.spec = spec
        self.window = (spec.window_slice(),) * spec.dim

    def _setup(self) -> tuple[CoefficientOperator, np.ndarray]:
        spec = self.spec
        mesh = np.meshgrid(*(spec.axis(i) for i in range(spec.dim)), indexing="ij")
        components = spec.field.components(*mesh)
        source = np.zeros(mesh[0].shape)
        for i in range(spec.dim):
            for j in range(spec.dim):
                if spec.uhat.hess[i, j] != 0.0:
                    source += spec.uhat.hess[i, j] * components[i, j]
        return CoefficientOperator(components, spec.dx_micro), source

    def iterate(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        spec = self.spec
        operator, source = self._setup()
        window_source = source[self.window]

        if not np.any(source):
            # uhat solves the micro problem exactly
            zeros = np.zeros_like(window_source)
            for n in range(spec.steps + 1):
                yield n, zeros, zeros
            return

        dt2 = spec.dt_micro * spec.dt_micro
        w = np.zeros_like(source)
        lap = np.zeros_like(source)
        yield 0, w[self.window], lap[self.window] + window_source
        w_next = w + 0.5 * dt2 * (lap + source)
        for n in range(1, spec.steps + 1):
            w_prev, w = w, w_next
            lap = operator(w)
            if not np.all(np.isfinite(w)):
                raise InstabilityError("micro", n, n * spec.dt_micro)
            yield n, w[self.window], lap[self.window] + window_source
            if n < spec.steps:
                w_next = 2.0 * w - w_prev + dt2 * (lap + source)

    def solve(self) -> MicroField:
        spec = self.spec
        offsets = spec.window_offsets()
        axes = tuple(spec.uhat.center[i] + offsets for i in range(spec.dim))
        uhat_window = spec.uhat(*np.meshgrid(*axes, indexing="ij"))

        u_levels, flux_levels = [], []
        for _, w, integrand in self.iterate():
            u_levels.append(w + uhat_window)
            flux_levels.append(integrand)

        u = mirror_in_time(np.array(u_levels))
        flux = mirror_in_time(np.array(flux_levels))
        times = spec.dt_micro * np.arange(-spec.steps, spec.steps + 1)
        logger.debug(
            "micro_solved",
            center=spec.uhat.center.tolist(),
            steps=spec.steps,
            cells=spec.cells,
            window_cells=spec.window_cells,
        )
        return MicroField(
            times=times,
            axes=axes,
            u=u,
            flux=flux,
            dx=spec.dx_micro,
            dt=spec.dt_micro,
            center=spec.uhat.center,
            spec=spec,
        )


def mirror_in_time(levels: np.ndarray) -> np.ndarray:
    """Extend levels t_0 .. t_N to t_-N .. t_N using u(-t) = u(t)."""
    return np.concatenate([levels[:0:-1], levels], axis=0)


def solve_micro(spec: MicroProblemSpec) -> MicroField:
    """Solve one micro problem and sample it on the space-time window."""
    return MicroSolver(spec).solve()
