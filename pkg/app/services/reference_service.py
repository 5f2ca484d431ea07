"""
Reference Service - ground truth for the multiscale solver.

Homogenized tensors (harmonic mean, invariant measure), the resolved direct
simulation (DNS), the homogenized macro solver and local space-time averages
of DNS fields.
"""
import math
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import spsolve

from app.core.config import settings
from app.core.exceptions import (
    CFLViolationError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    InstabilityError,
    PreconditionError,
    RangeError,
)
from app.models.coefficient import CoefficientField
from app.models.enums import BoundaryCondition, HessianStencil, TensorProvenance
from app.models.kernel import Kernel
from app.models.macro import Snapshot, Trajectory
from app.models.reference import HomogenizedTensor, InvariantMeasure
from app.services import stencil
from app.services.coefficient_service import builtin_coefficient
from app.services.kernel_service import contract, kernel_weights
from app.services.macro_service import init_macro, run_macro
from app.services.upscale_service import TensorFluxProvider

logger = structlog.get_logger(__name__)

MatrixCell = Callable[..., np.ndarray]

# Largest quadrature grid tried by harmonic_mean
HARMONIC_MEAN_MAX_POINTS = 1 << 24
RESIDUAL_TOLERANCE = 1e-8


# ---------------------------------------------------------------------------
# Homogenized tensors
# ---------------------------------------------------------------------------

def _periodic_mean(fn: Callable[..., np.ndarray], period: Sequence[float], per_unit: int) -> tuple[float, int]:
    axes = []
    for length in period:
        n = max(1, int(math.ceil(per_unit * length - 1e-9)))
        axes.append(length * np.arange(n) / n)
    grid = np.meshgrid(*axes, indexing="ij")
    values = np.broadcast_to(fn(*grid), grid[0].shape)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise DomainError("cell function must be positive and finite")
    return float(np.mean(1.0 / values)), grid[0].size


def harmonic_mean(
    cell: Callable[..., np.ndarray],
    period: Sequence[float] = (1.0,),
    start: Optional[int] = None,
    rtol: Optional[float] = None,
) -> float:
    """
    a0 = (mean of 1/a over one period)^-1.

    The periodic rectangle rule starts at ``start`` points per unit length and
    doubles until successive values differ by less than ``rtol`` relatively.

    Raises:
        DomainError: A nonpositive sample
    """
    return _harmonic_mean(cell, period, start, rtol)[0]


def _harmonic_mean(cell, period, start=None, rtol=None) -> tuple[float, int]:
    per_unit = start or settings.HARMONIC_MEAN_START
    rtol = settings.HARMONIC_MEAN_RTOL if rtol is None else rtol
    mean, size = _periodic_mean(cell, period, per_unit)
    value = 1.0 / mean
    while True:
        per_unit *= 2
        if size * 2 ** len(period) > HARMONIC_MEAN_MAX_POINTS:
            logger.warning("harmonic_mean_unconverged", per_unit=per_unit // 2, value=value)
            return value, per_unit // 2
        mean, size = _periodic_mean(cell, period, per_unit)
        refined = 1.0 / mean
        if abs(refined - value) <= rtol * abs(refined):
            logger.debug("harmonic_mean_converged", per_unit=per_unit, value=refined)
            return refined, per_unit
        value = refined


def _periodic_difference(n: int, second: bool) -> sp.csr_matrix:
    """h^2-scaled second difference or h-scaled (times 1/2) centered first difference."""
    if second:
        matrix = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="lil")
        matrix[0, n - 1] += 1.0
        matrix[n - 1, 0] += 1.0
    else:
        matrix = sp.diags([-0.5, 0.5], [-1, 1], shape=(n, n), format="lil")
        matrix[0, n - 1] += -0.5
        matrix[n - 1, 0] += 0.5
    return matrix.tocsr()


def _axis_operator(one_d: sp.csr_matrix, axis: int, dim: int, n: int) -> sp.csr_matrix:
    eye = sp.identity(n, format="csr")
    factors = [one_d if k == axis else eye for k in range(dim)]
    result = factors[0]
    for factor in factors[1:]:
        result = sp.kron(result, factor, format="csr")
    return result


def adjoint_cell_operator(samples: np.ndarray) -> sp.csr_matrix:
    """
    h^2 times the discrete adjoint rho -> sum_ij D_ij (A_ij rho) on a periodic grid.

    Args:
        samples: A_ij on the N^d grid, shape (d, d, N, ..., N)
    """
    dim = samples.shape[0]
    n = samples.shape[2]
    second = _periodic_difference(n, True)
    first = _periodic_difference(n, False)
    operator = sp.csr_matrix((n**dim, n**dim))
    for i in range(dim):
        d_ii = _axis_operator(second, i, dim, n)
        operator = operator + d_ii @ sp.diags(samples[i, i].ravel())
        for j in range(i + 1, dim):
            d_ij = _axis_operator(first, i, dim, n) @ _axis_operator(first, j, dim, n)
            operator = operator + 2.0 * (d_ij @ sp.diags(samples[i, j].ravel()))
    return operator.tocsr()


def cell_grid(n: int, dim: int) -> list[np.ndarray]:
    axis = np.arange(n) / n
    return np.meshgrid(*([axis] * dim), indexing="ij")


def solve_invariant_measure(A: MatrixCell, n: int, dim: int) -> InvariantMeasure:
    """
    Periodic density rho with sum_ij D_ij (A_ij rho) = 0 and mean one.

    The singular system is bordered with the mean-one row and a Lagrange
    multiplier column.

    Args:
        A: Cell matrix function of the unit-periodic fast variable, returning
            shape (d, d, *grid)
        n: Grid points per axis
        dim: Cell dimension

    Raises:
        DegeneracyError: The bordered system is singular, the residual is
            too large or rho is not positive
    """
    samples = np.asarray(A(*cell_grid(n, dim)), dtype=float)
    size = n**dim
    operator = adjoint_cell_operator(samples)
    ones = np.ones((size, 1))
    bordered = sp.bmat(
        [[operator, sp.csr_matrix(ones)], [sp.csr_matrix(ones.T / size), None]],
        format="csc",
    )
    rhs = np.zeros(size + 1)
    rhs[-1] = 1.0
    solution = spsolve(bordered, rhs)
    rho = solution[:size]
    if not np.all(np.isfinite(solution)):
        raise DegeneracyError("adjoint cell problem has no one-dimensional kernel")

    scale = float(np.max(np.abs(samples)))
    residual = float(np.max(np.abs(operator @ rho)))
    if residual > RESIDUAL_TOLERANCE * scale:
        raise DegeneracyError(f"invariant measure residual {residual:.3g} too large")
    if np.any(rho <= 0):
        raise DegeneracyError("invariant measure is not positive")
    rho = rho / rho.mean()
    logger.debug("invariant_measure_solved", n=n, dim=dim, residual=residual)
    return InvariantMeasure(rho=rho.reshape((n,) * dim), residual=residual)


def homogenized_coefficient(A: MatrixCell, measure: InvariantMeasure) -> HomogenizedTensor:
    """A0 = mean of A rho over the cell grid of ``measure``."""
    samples = np.asarray(A(*cell_grid(measure.resolution, measure.dim)), dtype=float)
    axes = tuple(range(2, samples.ndim))
    a0 = np.mean(samples * measure.rho, axis=axes)
    a0 = 0.5 * (a0 + a0.T)
    return HomogenizedTensor(
        a0=a0, provenance=TensorProvenance.INVARIANT_MEASURE, resolution=measure.resolution
    )


def cell_matrix(field: CoefficientField) -> MatrixCell:
    """The matrix cell function y -> cell(y) D of a separable medium."""
    expand = (slice(None), slice(None)) + (None,) * field.dim

    def matrix(*y: np.ndarray) -> np.ndarray:
        values = np.broadcast_to(field.cell(*y), np.shape(y[0]))
        return field.tensor[expand] * values

    return matrix


def reference_tensor(
    field: CoefficientField,
    ratio: Optional[float] = None,
    literature_value: Optional[float] = None,
) -> HomogenizedTensor:
    """
    Homogenized tensor hm(cell) D of a separable medium.

    Args:
        field: Medium
        ratio: Frequency ratio of a periodized twin, for almost periodic media
        literature_value: Use this scalar instead of computing the harmonic mean

    Raises:
        ConfigurationError: Aperiodic cell without a periodizing ratio
    """
    if literature_value is not None:
        return HomogenizedTensor(
            a0=literature_value * np.array(field.tensor),
            provenance=TensorProvenance.LITERATURE_VALUE,
        )
    source = field
    if ratio is not None and field.param("ratio") is not None:
        source = builtin_coefficient(field.name, field.epsilon, **{**dict(field.params), "ratio": ratio})
    if source.cell_period is None:
        raise ConfigurationError(
            f"{field.name} is not periodic; give a rational ratio to periodize it"
        )
    value, per_unit = _harmonic_mean(source.cell, source.cell_period)
    logger.info(
        "reference_tensor",
        coefficient=field.name,
        a0=value,
        period=source.cell_period,
        points_per_unit=per_unit,
    )
    return HomogenizedTensor(
        a0=value * np.array(field.tensor),
        provenance=TensorProvenance.HARMONIC_MEAN,
        resolution=per_unit,
    )


def reference_provider(
    field: CoefficientField,
    ratio: Optional[float] = None,
    literature_value: Optional[float] = None,
) -> TensorFluxProvider:
    """Flux provider of the homogenized medium, slow modulation included."""
    return TensorFluxProvider(reference_tensor(field, ratio, literature_value), modulation=field.slow)


# ---------------------------------------------------------------------------
# Time stepping references
# ---------------------------------------------------------------------------

def dns_time_step_limit(dx: float, field: CoefficientField) -> float:
    return dx / math.sqrt(field.dim * field.upper_bound)


def discrete_energy(
    field: CoefficientField,
    u_next: np.ndarray,
    u_curr: np.ndarray,
    axes: Sequence[np.ndarray],
    dt: float,
    bc: BoundaryCondition,
) -> float:
    """
    Leap-frog invariant of a separable medium A = m(x) D:

        sum (1/m) ((u^{n+1} - u^n) / dt)^2 + <-D : grad^2_h u^{n+1}, u^n>,

    both sums scaled by h^d. Conserved exactly without sources.
    """
    dim = len(axes)
    h = float(axes[0][1] - axes[0][0])
    weight = 1.0 / field.profile(*np.meshgrid(*axes, indexing="ij"))
    expand = (slice(None), slice(None)) + (None,) * dim
    operator = stencil.CoefficientOperator(np.array(field.tensor)[expand], h)
    mask = stencil.interior_mask(u_curr.shape, bc)
    velocity = (u_next - u_curr) / dt
    kinetic = np.sum((weight * velocity**2)[mask])
    potential = -np.sum((operator(u_next) * u_curr)[mask])
    return float((kinetic + potential) * h**dim)


def solve_dns(
    field: CoefficientField,
    g: Callable[..., np.ndarray],
    h: Optional[Callable[..., np.ndarray]],
    f: Optional[Callable[..., np.ndarray]],
    *,
    length: float,
    n_cells: int,
    bc: BoundaryCondition,
    T: float,
    dt: Optional[float] = None,
    snapshot_times: Optional[Sequence[float]] = None,
    frame_windows: Sequence[tuple[float, float]] = (),
    track_energy: bool = False,
) -> Trajectory:
    """
    Resolved leap-frog simulation of u_tt = A^eps : grad^2 u + f.

    Args:
        field: Medium
        g, h: Initial value and velocity, functions of the coordinates
        f: Source f(t, *coords), zero when None
        length: Domain side
        n_cells: Cells per axis
        bc: Boundary condition
        T: Final time; the run continues to the end of the last frame window
        dt: Time step, DNS_CFL_FRACTION of the limit by default, adjusted to
            divide T
        snapshot_times: Times to record, T by default
        frame_windows: (start, end) intervals whose every level is stored
        track_energy: Record the discrete energy after every step

    Raises:
        PreconditionError: Fewer than 10 points per wavelength
        CFLViolationError: dt above the stability limit
        InstabilityError: Non-finite values
    """
    dx = length / n_cells
    if dx > field.epsilon / 10.0 * (1.0 + 1e-9):
        raise PreconditionError(f"DNS grid dx={dx:.4g} does not resolve epsilon={field.epsilon}")
    dt_max = dns_time_step_limit(dx, field)
    if dt is None:
        steps = max(1, math.ceil(T / (settings.DNS_CFL_FRACTION * dt_max)))
        dt = T / steps if T > 0 else settings.DNS_CFL_FRACTION * dt_max
    if dt >= dt_max:
        raise CFLViolationError(dt, dt_max, "dns")

    dim = field.dim
    axes = stencil.grid_axes(length, n_cells, dim, bc)
    mesh = np.meshgrid(*axes, indexing="ij")
    operator = stencil.CoefficientOperator(field.components(*mesh), dx)

    def source(t: float) -> np.ndarray:
        if f is None:
            return 0.0
        return np.broadcast_to(f(t, *mesh), mesh[0].shape)

    u_prev = stencil.enforce_boundary(np.array(np.broadcast_to(g(*mesh), mesh[0].shape), dtype=float), bc)
    velocity = 0.0 if h is None else np.broadcast_to(h(*mesh), mesh[0].shape)
    u_curr = stencil.enforce_boundary(
        u_prev + dt * velocity + 0.5 * dt * dt * (operator(u_prev) + source(0.0)), bc
    )

    trajectory = Trajectory(axes=axes, dt=dt, bc=bc)
    tol = 1e-9 * dt
    pending = sorted(snapshot_times or (T,))
    # one extra level on each side so every window is covered by whole steps
    windows = [(start - dt, end + dt) for start, end in frame_windows]
    t_end = max([T] + [end for _, end in windows])

    def keep(t: float, values: np.ndarray) -> None:
        while pending and t >= pending[0] - tol:
            pending.pop(0)
            if not trajectory.snapshots or trajectory.snapshots[-1].t != t:
                trajectory.record(t, values)
        if any(start - tol <= t <= end + tol for start, end in windows):
            trajectory.frames.append(Snapshot(t=t, values=values.copy()))

    keep(0.0, u_prev)
    n = 1
    t = dt
    if T > 0 or frame_windows:
        keep(t, u_curr)
    if track_energy:
        trajectory.energy.append((0.5 * dt, discrete_energy(field, u_curr, u_prev, axes, dt, bc)))
    while t < t_end - tol:
        u_next = 2.0 * u_curr - u_prev + dt * dt * (operator(u_curr) + source(t))
        stencil.enforce_boundary(u_next, bc)
        n += 1
        t = n * dt
        if not np.all(np.isfinite(u_next)):
            raise InstabilityError("dns", n, t)
        if track_energy:
            trajectory.energy.append((t - 0.5 * dt, discrete_energy(field, u_next, u_curr, axes, dt, bc)))
        u_prev, u_curr = u_curr, u_next
        keep(t, u_curr)
    logger.info("dns_finished", cells=n_cells, dim=dim, steps=n, dt=dt, frames=len(trajectory.frames))
    return trajectory


def solve_homogenized(
    tensor: HomogenizedTensor,
    g: Callable[..., np.ndarray],
    h: Optional[Callable[..., np.ndarray]],
    f: Optional[Callable[..., np.ndarray]],
    *,
    length: float,
    n_cells: int,
    bc: BoundaryCondition,
    T: float,
    dt: float,
    snapshot_times: Optional[Sequence[float]] = None,
    stencil_kind: HessianStencil = HessianStencil.CENTERED,
    modulation: Optional[Callable[..., np.ndarray]] = None,
) -> Trajectory:
    """Macro leap-frog with the constant tensor flux F = m(x) A0 : hess."""
    provider = TensorFluxProvider(tensor, modulation=modulation)
    state = init_macro(
        g, h, f, provider,
        length=length, n_cells=n_cells, dim=tensor.dim, dt=dt, bc=bc, stencil_kind=stencil_kind,
    )
    return run_macro(state, provider, T, f, snapshot_times, stencil_kind)


# ---------------------------------------------------------------------------
# Local averages
# ---------------------------------------------------------------------------

def local_average_field(
    trajectory: Trajectory,
    kernel_space: Kernel,
    kernel_time: Kernel,
    eta: float,
    tau: float,
    points: Sequence[tuple[float, Sequence[float]]],
) -> np.ndarray:
    """
    Space-time kernel averages of stored DNS frames.

    The window around (t, x) is [t - tau/2, t + tau/2] x (x + [-eta/2, eta/2]^d).
    Periodic grids wrap the spatial window.

    Args:
        trajectory: DNS trajectory with frames covering every window
        points: (t, x) pairs

    Raises:
        RangeError: A window reaches outside the stored frames or the domain
    """
    if not trajectory.frames:
        raise RangeError("trajectory holds no dense frames")
    times = np.array([frame.t for frame in trajectory.frames])
    dx = trajectory.spacing
    n_nodes = len(trajectory.axes[0])
    half_eta, half_tau = 0.5 * eta, 0.5 * tau
    tol = 1e-9 * trajectory.dt
    results = []
    for t_c, x_c in points:
        x_c = np.atleast_1d(np.asarray(x_c, dtype=float))
        margin = trajectory.dt + tol
        selected = np.flatnonzero((times >= t_c - half_tau - margin) & (times <= t_c + half_tau + margin))
        if selected.size < 3 or times[selected[0]] > t_c - half_tau + tol or times[selected[-1]] < t_c + half_tau - tol:
            raise RangeError(f"stored frames do not cover [{t_c - half_tau:.6g}, {t_c + half_tau:.6g}]")
        try:
            time_weights = kernel_weights(kernel_time, half_tau, times[selected], t_c)
        except PreconditionError as exc:
            raise RangeError(str(exc)) from exc

        index_sets, space_weights = [], []
        for c in x_c:
            lo = math.floor((c - half_eta) / dx + 1e-9)
            hi = math.ceil((c + half_eta) / dx - 1e-9)
            k = np.arange(lo, hi + 1)
            if trajectory.bc is BoundaryCondition.PERIODIC:
                index_sets.append(k % n_nodes)
            else:
                if lo < 0 or hi >= n_nodes:
                    raise RangeError(f"averaging window around x={c:.6g} leaves the domain")
                index_sets.append(k)
            space_weights.append(kernel_weights(kernel_space, half_eta, k * dx, c))

        block = np.ix_(*index_sets)
        levels = np.array([contract(trajectory.frames[i].values[block], space_weights) for i in selected])
        results.append(float(levels @ time_weights))
    return np.array(results)
