"""Unit tests for lifting, micro problem sizing and the micro solver."""

import math
from dataclasses import replace

import numpy as np
import pytest

from app.core.exceptions import CFLViolationError, PreconditionError
from app.models.micro import QuadraticPoly
from app.services.coefficient_service import builtin_coefficient, sup_norm
from app.services.micro_service import (
    MicroSolver,
    build_micro_spec,
    fit_quadratic,
    micro_time_step_limit,
    patch_offsets,
    size_micro_box,
    solve_micro,
)


pytestmark = pytest.mark.unit


class TestQuadraticPoly:
    """Test the lifted polynomial."""

    def test_value_at_center(self):
        """u(x_I) = c0 exactly."""
        poly = QuadraticPoly(center=[0.3, 0.4], c0=1.5, grad=[2.0, -1.0], hess=[[1.0, 0.5], [0.5, -2.0]])
        assert poly(np.array(0.3), np.array(0.4)) == 1.5

    def test_hessian_rejected_when_asymmetric(self):
        """hess must be symmetric."""
        with pytest.raises(ValueError):
            QuadraticPoly(center=[0.0, 0.0], c0=0.0, grad=[0.0, 0.0], hess=[[1.0, 0.5], [0.4, 1.0]])

    def test_sum_requires_same_center(self):
        """Polynomials expanded at different points cannot be added."""
        a = QuadraticPoly.from_hessian([[2.0]], [0.0])
        b = QuadraticPoly.from_hessian([[2.0]], [0.5])
        with pytest.raises(ValueError):
            a + b

    def test_laplacian(self):
        """The Laplacian is the Hessian trace."""
        assert QuadraticPoly.from_hessian(np.diag([2.0, 3.0])).laplacian == 5.0


class TestFitQuadratic:
    """Test the least-squares lift of macro patches."""

    @pytest.mark.parametrize("dim,m", [(1, 1), (1, 2), (2, 1), (2, 2)])
    def test_exact_for_quadratics(self, rng, dim, m):
        """Quadratic data is reproduced exactly."""
        hess = rng.normal(size=(dim, dim))
        hess = hess + hess.T
        truth = QuadraticPoly(center=rng.uniform(size=dim), c0=rng.normal(), grad=rng.normal(size=dim), hess=hess)
        H = 0.05
        offsets = patch_offsets(m, dim)
        points = truth.center + H * offsets
        patch = truth(*points.T).reshape((2 * m + 1,) * dim)
        fitted = fit_quadratic(patch, H, truth.center)
        assert fitted.c0 == pytest.approx(truth.c0, abs=1e-10)
        assert np.allclose(fitted.grad, truth.grad, atol=1e-8)
        assert np.allclose(fitted.hess, truth.hess, atol=1e-6)

    def test_even_width_rejected(self):
        """Patches must have an odd width."""
        with pytest.raises(PreconditionError):
            fit_quadratic(np.zeros(4), 0.1, [0.0])

    def test_non_finite_rejected(self):
        """NaN values are a precondition failure."""
        patch = np.zeros(5)
        patch[2] = np.nan
        with pytest.raises(PreconditionError):
            fit_quadratic(patch, 0.1, [0.0])


class TestMicroSizing:
    """Test box, grid and step sizing."""

    def test_box_half_width(self, sin_field):
        """ell = eta/2 + tau/2 sqrt(|A|_inf)."""
        ell = size_micro_box(0.1, 0.1, sin_field)
        assert ell == pytest.approx(0.05 + 0.05 * math.sqrt(sup_norm(sin_field)))

    def test_spec_resolution_and_cfl(self, sin_field):
        """dx resolves epsilon, dt satisfies the CFL bound and the box covers the dependence domain."""
        uhat = QuadraticPoly.from_hessian([[2.0]], [0.2])
        spec = build_micro_spec(sin_field, uhat, 0.1, 0.1, points_per_wavelength=20)
        assert spec.dx_micro <= sin_field.epsilon / 20 * (1 + 1e-12)
        assert spec.dt_micro < micro_time_step_limit(spec.dx_micro, sin_field)
        assert spec.window_cells * spec.dx_micro == pytest.approx(0.05)
        assert spec.steps * spec.dt_micro == pytest.approx(0.05)
        assert spec.cells >= spec.window_cells + spec.steps + 1
        assert spec.ell >= size_micro_box(0.1, 0.1, sin_field) - spec.dx_micro

    def test_too_coarse(self, sin_field):
        """Fewer than ten points per wavelength is rejected."""
        uhat = QuadraticPoly.from_hessian([[2.0]])
        with pytest.raises(PreconditionError):
            build_micro_spec(sin_field, uhat, 0.1, 0.1, points_per_wavelength=8)

    def test_dimension_mismatch(self, sin_field):
        """uhat and the medium must share a dimension."""
        with pytest.raises(PreconditionError):
            build_micro_spec(sin_field, QuadraticPoly.from_hessian(np.eye(2)), 0.1, 0.1)

    def test_window_is_centered(self, sin_field):
        """The window slice holds 2 window_cells + 1 nodes around the center."""
        spec = build_micro_spec(sin_field, QuadraticPoly.from_hessian([[2.0]], [0.3]), 0.1, 0.1, 20)
        axis = spec.axis(0)
        window = axis[spec.window_slice()]
        assert len(window) == 2 * spec.window_cells + 1
        assert window[spec.window_cells] == pytest.approx(0.3, abs=1e-15)


class TestMicroSolver:
    """Test the leap-frog micro solver."""

    def test_rejects_unstable_step(self, sin_field):
        """A micro problem with dt above the limit raises a CFL violation."""
        spec = build_micro_spec(sin_field, QuadraticPoly.from_hessian([[2.0]]), 0.1, 0.1, 20)
        with pytest.raises(CFLViolationError):
            MicroSolver(replace(spec, dt_micro=10 * spec.dt_micro))

    def test_time_symmetry_is_exact(self, sin_field):
        """Samples at -t equal samples at t bitwise."""
        micro = solve_micro(build_micro_spec(sin_field, QuadraticPoly.from_hessian([[2.0]], [0.1]), 0.1, 0.1, 20))
        assert np.array_equal(micro.u, micro.u[::-1])
        assert np.array_equal(micro.flux, micro.flux[::-1])
        assert np.array_equal(micro.times, -micro.times[::-1])
        assert micro.steps == micro.spec.steps

    def test_initial_level_is_uhat(self, sin_field):
        """u(0) = uhat on the window."""
        uhat = QuadraticPoly(center=[0.1], c0=0.7, grad=[-1.0], hess=[[2.0]])
        micro = solve_micro(build_micro_spec(sin_field, uhat, 0.1, 0.1, 20))
        expected = uhat(micro.axes[0])
        assert np.allclose(micro.u[micro.steps], expected, rtol=0, atol=1e-15)

    def test_constant_medium_keeps_quadratic(self, constant_field):
        """For a constant medium the deviation is uniform: u = uhat + c tr(hess) t^2 / 2."""
        field = constant_field(c=2.0)
        uhat = QuadraticPoly.from_hessian([[3.0]], [0.0])
        micro = solve_micro(build_micro_spec(field, uhat, 0.1, 0.1, 10))
        t = micro.times[-1]
        expected = uhat(micro.axes[0]) + 0.5 * 6.0 * t * t
        assert np.allclose(micro.u[-1], expected, rtol=1e-12, atol=1e-12)
        assert np.allclose(micro.flux, 6.0, rtol=1e-12)

    def test_zero_source_shortcut(self):
        """An off-diagonal probe in a diagonal medium leaves uhat unchanged."""
        field = builtin_coefficient("per2d_exp", 0.05)
        hess = np.array([[0.0, 1.0], [1.0, 0.0]])
        micro = solve_micro(build_micro_spec(field, QuadraticPoly.from_hessian(hess), 0.1, 0.1, 10))
        assert not np.any(micro.flux)
        assert np.array_equal(micro.u[0], micro.u[micro.steps])

    def test_doubling_box_is_bit_identical(self, sin_field):
        """The periodic wrap never reaches the window."""
        spec = build_micro_spec(sin_field, QuadraticPoly.from_hessian([[2.0]], [0.4]), 0.1, 0.1, 20)
        narrow = list(MicroSolver(spec).iterate())
        wide = list(MicroSolver(spec.widened(2)).iterate())
        assert len(narrow) == len(wide)
        for (_, w1, f1), (_, w2, f2) in zip(narrow, wide):
            assert np.array_equal(w1, w2)
            assert np.array_equal(f1, f2)
