"""Unit tests for error norms and slope fits."""

import numpy as np
import pytest

from app.core.exceptions import PreconditionError, RegressionError
from app.services.analysis_service import (
    discrete_l2_norm,
    fit_envelope_slope,
    fit_loglog_slope,
    relative_l2_error,
)


pytestmark = pytest.mark.unit


class TestNorms:
    """Test discrete L2 norms."""

    def test_scaling_with_dimension(self):
        """The cell volume is H^d."""
        assert discrete_l2_norm(np.ones(4), 0.25) == pytest.approx(1.0)
        assert discrete_l2_norm(np.ones((4, 4)), 0.25) == pytest.approx(1.0)

    def test_relative_error(self):
        """|v - r| / |r| on the same grid."""
        reference = np.array([3.0, 4.0])
        assert relative_l2_error(reference * 1.1, reference, 0.5) == pytest.approx(0.1)

    def test_relative_error_shape_mismatch(self):
        """Arrays must share a shape."""
        with pytest.raises(PreconditionError):
            relative_l2_error(np.zeros(3), np.ones(4), 0.1)

    def test_relative_error_zero_reference(self):
        """A zero reference has no relative error."""
        with pytest.raises(PreconditionError):
            relative_l2_error(np.ones(3), np.zeros(3), 0.1)


class TestSlopes:
    """Test log-log regression."""

    @pytest.mark.parametrize("rate", [2.0, 7.0])
    def test_exact_power_law(self, rate):
        """e = C eps^rate gives the rate back."""
        eps = np.array([1 / 50, 1 / 80, 1 / 125, 1 / 200, 1 / 320])
        pairs = list(zip(eps, 3.0 * eps**rate))
        assert fit_loglog_slope(pairs, noise_floor=0.0) == pytest.approx(rate, rel=1e-10)

    def test_noise_floor_drops_points(self):
        """Points below the floor are ignored."""
        pairs = [(0.1, 1e-2), (0.05, 2.5e-3), (0.025, 6.25e-4), (0.0125, 1e-15)]
        assert fit_loglog_slope(pairs) == pytest.approx(2.0, rel=1e-10)

    def test_too_few_points(self):
        """Fewer than three usable points cannot be fitted."""
        with pytest.raises(RegressionError):
            fit_loglog_slope([(0.1, 1e-2), (0.05, 1e-14), (0.025, 0.0)])

    def test_non_finite_dropped(self):
        """NaN errors never enter the fit."""
        with pytest.raises(RegressionError):
            fit_loglog_slope([(0.1, 1e-2), (0.05, float("nan")), (0.025, 1e-3)])


class TestEnvelopeSlopes:
    """Test slopes through the per-bin maxima of an oscillating sweep."""

    @pytest.mark.parametrize("rate", [3.0, 7.0])
    def test_follows_peaks(self, rate):
        """Dips between the peaks do not bend the fitted rate."""
        eps = np.geomspace(1 / 320, 1 / 50, 25)
        weights = np.array([1.0 if k % 5 == 4 else 10.0 ** -(1 + k % 3) for k in range(25)])
        pairs = list(zip(eps[::-1], (weights * eps**rate)[::-1]))
        assert fit_envelope_slope(pairs, 5, noise_floor=0.0) == pytest.approx(rate, rel=1e-10)

    def test_too_few_bins(self):
        """Two bins do not define a slope."""
        with pytest.raises(RegressionError):
            fit_envelope_slope([(0.1, 1.0), (0.05, 0.1), (0.02, 0.01)], 2)

    def test_more_bins_than_points(self):
        """Every bin needs at least one point."""
        with pytest.raises(RegressionError):
            fit_envelope_slope([(0.1, 1.0), (0.05, 0.1), (0.02, 0.01)], 4)
