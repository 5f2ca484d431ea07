"""Convergence studies; minutes of CPU time, run with ``pytest -m slow``."""

from pathlib import Path

import pytest

from app.schemas.experiment import ExperimentConfig, load_experiment
from app.services.check_service import RATE_BINS, RATE_EPSILONS, SWEEP_EPSILONS
from app.services.experiment_service import ExperimentService

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


@pytest.mark.slow
@pytest.mark.integration
class TestConvergence:
    """Rates in epsilon for periodic and locally periodic media."""

    @pytest.mark.parametrize("q", [1, 3, 5])
    def test_upscaling_rate(self, tmp_path, q):
        """The envelope of the flux error for 1.1 + sin decays like eps^(q+2)."""
        cfg = ExperimentConfig.model_validate({
            "experiment": {"kind": "upscaling", "name": f"rate_q{q}"},
            "coefficient": {"name": "per1d_sin"},
            "averaging": {
                "eta": 0.1,
                "kernels": [(3, q)],
                "epsilons": list(RATE_EPSILONS),
                "slope_bins": RATE_BINS,
            },
        })
        report = ExperimentService(cfg, tmp_path, workers=2).run()
        slope = report.envelope_slope(3, q)
        assert slope is not None
        assert q + 1.3 <= slope <= q + 2.8

    def test_periodic_solution_rate(self, tmp_path):
        """EFA approaches the homogenized solution at least quadratically in eps."""
        cfg = ExperimentConfig.model_validate({
            "experiment": {"kind": "solution1d", "name": "sol_rate"},
            "coefficient": {"name": "per1d_sin"},
            "averaging": {"eta": 0.1, "kernels": [(3, 3)], "epsilons": list(SWEEP_EPSILONS)},
            "macro": {"n_cells": 50, "dt": 0.01, "T": 0.5},
            "initial": {"profile": "gaussian", "center": [0.5], "sigma": 0.08},
        })
        report = ExperimentService(cfg, tmp_path, workers=2).run()
        slope = report.slope(3, 3)
        assert slope is not None and slope >= 2.0

    def test_locally_periodic_dns(self, tmp_path):
        """EFA stays within 5% of the local average of a resolved run."""
        cfg = load_experiment(CONFIGS / "solution1d_locper.ini")
        report = ExperimentService(cfg, tmp_path, workers=2).run()
        assert report.extras["dns_distance_efa"] <= 0.05
        assert report.extras["dns_within_tolerance"] == 1.0

    def test_published_locally_periodic_run_stays_bounded(self, tmp_path):
        """The published 50-point setup runs to T and EFA tracks the homogenized solution."""
        cfg = load_experiment(CONFIGS / "solution1d_locper_published.ini")
        report = ExperimentService(cfg, tmp_path, workers=2).run()
        assert report.extras["dns_distance_efa"] == pytest.approx(report.extras["dns_distance_homogenized"], abs=0.05)
        assert "dns_within_tolerance" not in report.extras
