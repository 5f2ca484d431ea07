"""
Macro Service - leap-frog stepping of the macro model

    U^{n+1} = 2 U^n - U^{n-1} + dt^2 (F^n + f^n)

on a uniform grid of [0, L]^d. F comes from a flux provider evaluated on
quadratic fits of U^n. Centered differences are the default; least-squares
fits on (2m+1)^d patches are kept as an option.

The least-squares second derivative has a positive symbol at the grid
Nyquist mode (+4/(7 H^2) per axis for m = 2, +4/(3 H^2) for m = 1), so
leap-frog on those fits grows for every dt. run_macro stops unforced runs
whose amplitude leaves the bound set by MACRO_GROWTH_LIMIT.
"""
import math
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import CFLViolationError, InstabilityError, PreconditionError
from app.models.enums import BoundaryCondition, HessianStencil
from app.models.macro import MacroState, QuadraticFitBatch, Trajectory
from app.services import stencil
from app.services.micro_service import quadratic_design, unpack_coefficients

logger = structlog.get_logger(__name__)

GridFunction = Callable[..., Union[np.ndarray, float]]
Forcing = Callable[..., Union[np.ndarray, float]]


class _ActiveNodes:
    """Nodes that are time stepped: all of them for periodic grids, the interior otherwise."""

    def __init__(self, shape: tuple[int, ...], bc: BoundaryCondition, H: float):
        self.shape = shape
        self.bc = bc
        self.H = H
        self.dim = len(shape)
        mask = stencil.interior_mask(shape, bc)
        self.indices = np.flatnonzero(mask)
        self.multi = np.stack(np.unravel_index(self.indices, shape), axis=1)
        self.points = H * self.multi.astype(float)


class QuadraticFitter(_ActiveNodes):
    """
    Least-squares quadratic fits on (2m+1)^d patches.

    Not stable under leap-frog on fine grids, see the module docstring.

    Periodic grids wrap patches around. Dirichlet grids shift patches inward
    near the boundary so every patch keeps (2m+1)^d nodes. One pseudo-inverse
    is precomputed per distinct offset pattern.
    """

    def __init__(self, shape: tuple[int, ...], bc: BoundaryCondition, H: float, m: Optional[int] = None):
        super().__init__(shape, bc, H)
        self.m = settings.LSQ_HALF_WIDTH if m is None else m
        width = 2 * self.m + 1
        if min(shape) < width:
            raise PreconditionError(f"grid {shape} too small for {width}-point patches")

        base = np.arange(-self.m, self.m + 1)
        patterns: dict[tuple[int, ...], int] = {}
        pinvs: list[np.ndarray] = []
        self.pattern_ids = np.empty(len(self.indices), dtype=int)
        self.patch_index = np.empty((len(self.indices), width**self.dim), dtype=int)

        for k, node in enumerate(self.multi):
            nodes_per_axis, shifts = [], []
            for axis, i in enumerate(node):
                n = shape[axis]
                if bc is BoundaryCondition.PERIODIC:
                    nodes = (i + base) % n
                    offsets = base
                else:
                    start = min(max(i - self.m, 0), n - width)
                    nodes = start + np.arange(width)
                    offsets = nodes - i
                nodes_per_axis.append(nodes)
                shifts.append(int(offsets[0]))
            grids = np.meshgrid(*nodes_per_axis, indexing="ij")
            self.patch_index[k] = np.ravel_multi_index([g.ravel() for g in grids], shape)
            key = tuple(shifts)
            if key not in patterns:
                offset_grids = np.meshgrid(*[s + np.arange(width) for s in shifts], indexing="ij")
                offsets = np.stack([g.ravel() for g in offset_grids], axis=1)
                patterns[key] = len(pinvs)
                pinvs.append(np.linalg.pinv(quadratic_design(offsets)))
            self.pattern_ids[k] = patterns[key]
        self.pinvs = pinvs

    def fit(self, U: np.ndarray) -> QuadraticFitBatch:
        values = U.reshape(-1)[self.patch_index]
        coeffs = np.empty((len(self.indices), self.pinvs[0].shape[0]))
        for pid, pinv in enumerate(self.pinvs):
            selected = self.pattern_ids == pid
            coeffs[selected] = values[selected] @ pinv.T
        c0, grad, hess = unpack_coefficients(coeffs, self.dim, self.H)
        return QuadraticFitBatch(
            indices=self.indices, points=self.points, c0=c0, grad=grad, hess=hess
        )


class CenteredStencil(_ActiveNodes):
    """Standard second differences plus centered cross-differences."""

    def fit(self, U: np.ndarray) -> QuadraticFitBatch:
        n = len(self.indices)
        hess = stencil.hessian(U, self.H).reshape(self.dim, self.dim, -1)[:, :, self.indices]
        grad = np.stack(
            [stencil.first_difference(U, axis, self.H).reshape(-1)[self.indices] for axis in range(self.dim)],
            axis=1,
        )
        return QuadraticFitBatch(
            indices=self.indices,
            points=self.points,
            c0=U.reshape(-1)[self.indices],
            grad=grad.reshape(n, self.dim),
            hess=np.transpose(hess, (2, 0, 1)),
        )


@lru_cache(maxsize=32)
def estimator_for(
    shape: tuple[int, ...], bc: BoundaryCondition, H: float, kind: HessianStencil = HessianStencil.CENTERED
) -> Union[QuadraticFitter, CenteredStencil]:
    """Shared Hessian estimator for a grid."""
    if kind is HessianStencil.CENTERED:
        return CenteredStencil(shape, bc, H)
    return QuadraticFitter(shape, bc, H)


def macro_time_step_limit(H: float, dim: int, speed: float) -> float:
    """H / sqrt(d * margin * speed) for an effective tensor of spectral norm ``speed``."""
    return H / math.sqrt(dim * settings.MACRO_CFL_MARGIN * speed)


def _on_grid(fn: Optional[GridFunction], mesh: Sequence[np.ndarray]) -> np.ndarray:
    if fn is None:
        return np.zeros(mesh[0].shape)
    return np.array(np.broadcast_to(fn(*mesh), mesh[0].shape), dtype=float)


def _forcing(f: Optional[Forcing], t: float, points: np.ndarray) -> Union[np.ndarray, float]:
    if f is None:
        return 0.0
    return np.broadcast_to(f(t, *points.T), (len(points),))


def init_macro(
    g: GridFunction,
    h: Optional[GridFunction],
    f: Optional[Forcing],
    provider,
    *,
    length: float,
    n_cells: int,
    dim: int,
    dt: float,
    bc: BoundaryCondition,
    stencil_kind: HessianStencil = HessianStencil.CENTERED,
) -> MacroState:
    """
    Set up U^0 = g and the startup level

        U^1 = g + dt h + dt^2 / 2 (F^0 + f^0),

    with F^0 from the fit of g.

    Args:
        g: Initial value g(*coords)
        h: Initial velocity h(*coords), zero when None
        f: Source f(t, *coords), zero when None
        provider: Flux provider
        length: Domain side L
        n_cells: Cells per axis, H = L / n_cells
        dim: Spatial dimension
        dt: Macro time step
        bc: Boundary condition
        stencil_kind: Hessian estimator

    Raises:
        CFLViolationError: dt above the macro stability limit
    """
    if n_cells < 1 or not (length > 0 and dt > 0):
        raise PreconditionError("need n_cells >= 1, length > 0 and dt > 0")
    axes = stencil.grid_axes(length, n_cells, dim, bc)
    H = length / n_cells
    mesh = np.meshgrid(*axes, indexing="ij")
    shape = mesh[0].shape
    estimator = estimator_for(shape, bc, H, stencil_kind)

    speed = provider.speed_bound(estimator.points)
    dt_max = macro_time_step_limit(H, dim, speed)
    if dt >= dt_max:
        raise CFLViolationError(dt, dt_max, "macro")

    U0 = stencil.enforce_boundary(_on_grid(g, mesh), bc)
    V0 = _on_grid(h, mesh)
    batch = estimator.fit(U0)
    rhs = provider.flux(batch) + _forcing(f, 0.0, batch.points)

    U1 = np.zeros(shape)
    idx = batch.indices
    U1.reshape(-1)[idx] = (
        U0.reshape(-1)[idx] + dt * V0.reshape(-1)[idx] + 0.5 * dt * dt * rhs
    )
    if not np.all(np.isfinite(U1)):
        raise InstabilityError("macro", 1, dt)
    logger.info(
        "macro_initialized",
        dim=dim,
        n_cells=n_cells,
        H=H,
        dt=dt,
        dt_max=dt_max,
        bc=bc.value,
        stencil=stencil_kind.value,
    )
    return MacroState(
        dim=dim,
        length=length,
        n_cells=n_cells,
        dt=dt,
        bc=bc,
        U_curr=U1,
        U_prev=U0,
        t=dt,
        step=1,
    )


def macro_step(
    state: MacroState,
    provider,
    f: Optional[Forcing] = None,
    stencil_kind: HessianStencil = HessianStencil.CENTERED,
) -> MacroState:
    """
    One leap-frog step at every active node.

    Raises:
        InstabilityError: Non-finite values after the step
    """
    estimator = estimator_for(state.U_curr.shape, state.bc, state.H, stencil_kind)
    batch = estimator.fit(state.U_curr)
    rhs = provider.flux(batch) + _forcing(f, state.t, batch.points)

    idx = batch.indices
    U_next = np.zeros_like(state.U_curr)
    U_next.reshape(-1)[idx] = (
        2.0 * state.U_curr.reshape(-1)[idx]
        - state.U_prev.reshape(-1)[idx]
        + state.dt * state.dt * rhs
    )
    t_next = state.t + state.direction * state.dt
    if not np.all(np.isfinite(U_next)):
        raise InstabilityError("macro", state.step + 1, t_next)
    logger.debug("macro_step", step=state.step + 1, t=t_next)
    return MacroState(
        dim=state.dim,
        length=state.length,
        n_cells=state.n_cells,
        dt=state.dt,
        bc=state.bc,
        U_curr=U_next,
        U_prev=state.U_curr,
        t=t_next,
        step=state.step + 1,
        direction=state.direction,
    )


class _GrowthGuard:
    """Amplitude bound for unforced leap-frog runs."""

    def __init__(self, state: MacroState):
        self.t0 = state.t
        self.base = max(np.max(np.abs(state.U_prev)), np.max(np.abs(state.U_curr)))
        self.rate = np.max(np.abs(state.U_curr - state.U_prev)) / state.dt

    def check(self, state: MacroState) -> None:
        bound = settings.MACRO_GROWTH_LIMIT * (self.base + abs(state.t - self.t0) * self.rate)
        amplitude = np.max(np.abs(state.U_curr))
        if amplitude > bound:
            logger.warning("macro_growth", step=state.step, t=state.t, amplitude=float(amplitude), bound=float(bound))
            raise InstabilityError("macro", state.step, state.t, reason="amplitude growth")


def run_macro(
    state: MacroState,
    provider,
    T: float,
    f: Optional[Forcing] = None,
    snapshot_times: Optional[Sequence[float]] = None,
    stencil_kind: HessianStencil = HessianStencil.CENTERED,
) -> Trajectory:
    """
    Step until t >= T, recording snapshots.

    The initial data (U_prev of a freshly initialized state) is always
    recorded; each requested time is recorded at the first level reaching it.
    The final level is recorded too.

    Without a source, max|U^n| must stay below MACRO_GROWTH_LIMIT times
    max|U^0| + t max|V^0|, with V^0 the difference quotient of the two
    starting levels.

    Raises:
        InstabilityError: Non-finite values, or growth beyond that bound
    """
    tol = 1e-9 * state.dt
    trajectory = Trajectory(axes=state.axes, dt=state.dt, bc=state.bc)
    if state.step == 1:
        trajectory.record(state.t - state.dt, state.U_prev)
    else:
        trajectory.record(state.t, state.U_curr)
    start = trajectory.snapshots[0].t

    pending = sorted(t for t in (snapshot_times or (T,)) if t > start + tol)
    last_recorded = start

    def record_due(current: MacroState) -> None:
        nonlocal last_recorded
        while pending and current.t >= pending[0] - tol:
            pending.pop(0)
            if current.t != last_recorded:
                trajectory.record(current.t, current.U_curr)
                last_recorded = current.t

    guard = _GrowthGuard(state) if f is None else None

    if state.step == 1 and T >= state.t - tol:
        record_due(state)
    while state.t < T - tol:
        state = macro_step(state, provider, f, stencil_kind)
        if guard is not None:
            guard.check(state)
        record_due(state)
    if T > start + tol and last_recorded != state.t:
        trajectory.record(state.t, state.U_curr)
    trajectory.final_state = state
    logger.info("macro_finished", steps=state.step, t=state.t, snapshots=len(trajectory.snapshots))
    return trajectory
