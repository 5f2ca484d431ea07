"""Unit tests for the macro leap-frog solver and its Hessian estimators."""

import inspect
import math

import numpy as np
import pytest

from app.core.exceptions import CFLViolationError, InstabilityError, PreconditionError
from app.models.enums import BoundaryCondition, HessianStencil, TensorProvenance
from app.models.reference import HomogenizedTensor
from app.services import stencil
from app.services.macro_service import (
    CenteredStencil,
    QuadraticFitter,
    init_macro,
    macro_step,
    macro_time_step_limit,
    run_macro,
)
from app.services.upscale_service import TensorFluxProvider

pytestmark = pytest.mark.unit


A0 = 0.7


def _provider(a0: float = A0, dim: int = 1) -> TensorFluxProvider:
    tensor = HomogenizedTensor(a0=a0 * np.eye(dim), provenance=TensorProvenance.LITERATURE_VALUE)
    return TensorFluxProvider(tensor)


def _standing_wave(x):
    return np.sin(2 * np.pi * x)


def _quadratic(*coords):
    x = coords[0]
    if len(coords) == 1:
        return 0.3 - 1.2 * x + 2.5 * x * x
    y = coords[1]
    return 0.3 - 1.2 * x + 0.4 * y + 2.5 * x * x - 1.5 * x * y + 0.75 * y * y


def _standing_wave_error(n: int, T: float, kind: HessianStencil = HessianStencil.CENTERED) -> float:
    H = 1.0 / n
    dt = T / math.ceil(T / (0.4 * H))
    provider = _provider()
    state = init_macro(
        _standing_wave, None, None, provider,
        length=1.0, n_cells=n, dim=1, dt=dt, bc=BoundaryCondition.PERIODIC, stencil_kind=kind,
    )
    final = run_macro(state, provider, T, stencil_kind=kind).final
    x = H * np.arange(n)
    exact = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * math.sqrt(A0) * final.t)
    return float(np.sqrt(H * np.sum((final.values - exact) ** 2)))


class TestEstimators:
    """Test quadratic fits and centered differences on macro grids."""

    def test_dirichlet_fit_is_exact(self):
        """Shifted patches reproduce a quadratic at every interior node, including next to the wall."""
        shape = (11, 11)
        H = 0.1
        mesh = np.meshgrid(*stencil.grid_axes(1.0, 10, 2, BoundaryCondition.DIRICHLET_ZERO), indexing="ij")
        batch = QuadraticFitter(shape, BoundaryCondition.DIRICHLET_ZERO, H).fit(_quadratic(*mesh))
        assert len(batch) == 81
        expected = np.array([[5.0, -1.5], [-1.5, 1.5]])
        assert np.allclose(batch.hess, expected, atol=1e-8)
        assert np.allclose(batch.c0, _quadratic(*batch.points.T), atol=1e-12)

    def test_periodic_fit_away_from_seam(self):
        """Nodes whose patch does not wrap see the exact Hessian."""
        n = 20
        H = 1.0 / n
        x = H * np.arange(n)
        fitter = QuadraticFitter((n,), BoundaryCondition.PERIODIC, H, m=2)
        batch = fitter.fit(_quadratic(x))
        inner = slice(2, n - 2)
        assert np.allclose(batch.hess[inner, 0, 0], 5.0, atol=1e-8)
        assert np.allclose(batch.grad[inner, 0], -1.2 + 5.0 * x[inner], atol=1e-9)

    def test_patches_shared(self):
        """Periodic grids need a single pseudo-inverse."""
        fitter = QuadraticFitter((12, 12), BoundaryCondition.PERIODIC, 1.0 / 12)
        assert len(fitter.pinvs) == 1

    def test_grid_too_small(self):
        """A grid narrower than one patch is rejected."""
        with pytest.raises(PreconditionError):
            QuadraticFitter((4,), BoundaryCondition.PERIODIC, 0.25)

    def test_centered_stencil_is_exact_for_quadratics(self):
        """Second and cross differences are exact on quadratics."""
        shape = (9, 9)
        H = 0.125
        mesh = np.meshgrid(*stencil.grid_axes(1.0, 8, 2, BoundaryCondition.DIRICHLET_ZERO), indexing="ij")
        batch = CenteredStencil(shape, BoundaryCondition.DIRICHLET_ZERO, H).fit(_quadratic(*mesh))
        assert batch.hess.shape == (49, 2, 2)
        assert np.allclose(batch.hess, [[5.0, -1.5], [-1.5, 1.5]], atol=1e-10)


class TestInitMacro:
    """Test startup and stability checks."""

    def test_time_step_limit(self):
        """H / sqrt(d 1.1 speed)."""
        assert macro_time_step_limit(0.1, 2, 0.5) == pytest.approx(0.1 / math.sqrt(1.1))

    def test_cfl_violation(self):
        """dt at the limit is rejected."""
        H = 1.0 / 20
        dt = macro_time_step_limit(H, 1, A0)
        with pytest.raises(CFLViolationError):
            init_macro(
                _standing_wave, None, None, _provider(),
                length=1.0, n_cells=20, dim=1, dt=dt, bc=BoundaryCondition.PERIODIC,
            )

    def test_startup_level(self):
        """U^1 = g + dt h + dt^2/2 F^0 at t = dt."""
        dt = 0.01
        state = init_macro(
            lambda x: x * (1.0 - x), lambda x: np.ones_like(x), None, _provider(),
            length=1.0, n_cells=20, dim=1, dt=dt, bc=BoundaryCondition.DIRICHLET_ZERO,
        )
        x = state.axes[0]
        assert state.t == dt
        assert state.step == 1
        assert state.U_prev[0] == 0.0 and state.U_prev[-1] == 0.0
        inner = slice(1, -1)
        expected = x[inner] * (1.0 - x[inner]) + dt - dt * dt * A0
        assert np.allclose(state.U_curr[inner], expected, atol=1e-12)

    def test_invalid_grid(self):
        """n_cells, length and dt must be positive."""
        with pytest.raises(PreconditionError):
            init_macro(
                _standing_wave, None, None, _provider(),
                length=1.0, n_cells=0, dim=1, dt=0.01, bc=BoundaryCondition.PERIODIC,
            )


class TestStepping:
    """Test the leap-frog recursion."""

    def test_dirichlet_boundary_stays_zero(self):
        """Boundary faces remain zero."""
        state = init_macro(
            lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), None, None, _provider(dim=2),
            length=1.0, n_cells=10, dim=2, dt=0.02, bc=BoundaryCondition.DIRICHLET_ZERO,
        )
        for _ in range(5):
            state = macro_step(state, _provider(dim=2))
        U = state.U_curr
        assert not np.any(U[0]) and not np.any(U[-1])
        assert not np.any(U[:, 0]) and not np.any(U[:, -1])

    def test_reversal_retraces(self):
        """Stepping a reversed state returns to the initial data."""
        provider = _provider()
        state = init_macro(
            _standing_wave, None, None, provider,
            length=1.0, n_cells=32, dim=1, dt=0.01, bc=BoundaryCondition.PERIODIC,
        )
        initial = state.U_prev.copy()
        for _ in range(20):
            state = macro_step(state, provider)
        back = state.reversed()
        for _ in range(20):
            back = macro_step(back, provider)
        assert back.t == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(back.U_curr, initial, atol=1e-10)

    def test_second_order_convergence(self):
        """Errors against the exact standing wave drop by about four per halving of H, down to n = 256."""
        errors = [_standing_wave_error(n, 0.5) for n in (32, 64, 128, 256)]
        rates = [math.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]
        assert all(1.8 <= rate <= 2.2 for rate in rates)
        assert errors[-1] < 1e-4

    def test_least_squares_stops_on_fine_grid(self):
        """Least-squares fits grow at the Nyquist mode; the run stops instead of returning garbage."""
        with pytest.raises(InstabilityError) as info:
            _standing_wave_error(256, 0.5, HessianStencil.LEAST_SQUARES)
        assert info.value.where == "macro"
        assert info.value.reason == "amplitude growth"

    def test_default_estimator_is_centered(self):
        """init_macro, macro_step and run_macro default to centered differences."""
        for fn in (init_macro, macro_step, run_macro):
            assert inspect.signature(fn).parameters["stencil_kind"].default is HessianStencil.CENTERED


class TestRunMacro:
    """Test snapshot recording."""

    def test_growth_guard_trips_on_nyquist_seed(self):
        """A least-squares run seeded at the Nyquist mode is stopped before T."""
        n = 64
        H = 1.0 / n
        provider = _provider()
        state = init_macro(
            lambda x: np.cos(np.pi * x / H), None, None, provider,
            length=1.0, n_cells=n, dim=1, dt=0.4 * H, bc=BoundaryCondition.PERIODIC,
            stencil_kind=HessianStencil.LEAST_SQUARES,
        )
        with pytest.raises(InstabilityError) as info:
            run_macro(state, provider, 1.0, stencil_kind=HessianStencil.LEAST_SQUARES)
        assert info.value.t < 1.0

    def test_growth_guard_ignores_forced_runs(self):
        """A growing source is not mistaken for an instability."""
        provider = _provider()
        state = init_macro(
            lambda x: 0.0 * x, None, lambda t, x: 100.0 + 0.0 * x, provider,
            length=1.0, n_cells=20, dim=1, dt=0.01, bc=BoundaryCondition.PERIODIC,
        )
        final = run_macro(state, provider, 0.5, f=lambda t, x: 100.0 + 0.0 * x).final
        assert np.allclose(final.values, 50.0 * final.t**2, rtol=1e-9)

    def test_snapshots_at_requested_times(self):
        """Initial data, each requested time and the final level are recorded once."""
        provider = _provider()
        state = init_macro(
            _standing_wave, None, None, provider,
            length=1.0, n_cells=20, dim=1, dt=0.01, bc=BoundaryCondition.PERIODIC,
        )
        trajectory = run_macro(state, provider, 0.5, snapshot_times=[0.25, 0.5])
        times = [snap.t for snap in trajectory.snapshots]
        assert times[0] == 0.0
        assert times[1:] == pytest.approx([0.25, 0.5], abs=1e-9)
        assert np.array_equal(trajectory.snapshots[0].values, _standing_wave(0.05 * np.arange(20)))
        assert trajectory.at(0.25).t == pytest.approx(0.25, abs=1e-9)
        assert trajectory.final_state.t == pytest.approx(0.5, abs=1e-9)

    def test_missing_snapshot(self):
        """Looking up an unrecorded time raises KeyError."""
        provider = _provider()
        state = init_macro(
            _standing_wave, None, None, provider,
            length=1.0, n_cells=20, dim=1, dt=0.01, bc=BoundaryCondition.PERIODIC,
        )
        trajectory = run_macro(state, provider, 0.1)
        with pytest.raises(KeyError):
            trajectory.at(0.05)
