"""Unit tests for settings, experiment files, exceptions and logging."""

import logging
import math
from pathlib import Path

import pytest
from pydantic import ValidationError

from app.core.config import Settings
from app.core.exceptions import CFLViolationError, ConfigurationError, EFAError, InstabilityError
from app.core.logging import setup_logging
from app.models.enums import BoundaryCondition, ExperimentKind, ReusePolicy
from app.schemas.experiment import ErrorReport, ErrorRow, SlopeRow, load_experiment

pytestmark = pytest.mark.unit

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


UPSCALING = """
[experiment]
kind = upscaling
name = per1d

[coefficient]
name = per1d_sin
alpha = 1.1   # default

[averaging]
eta = 0.1
kernels = 3:1, 3:3 3:5
epsilons = 1/50, 1/80, 0.005
"""

SOLUTION = """
[experiment]
kind = {kind}
name = sol

[coefficient]
name = {coefficient}

[averaging]
eta = 0.25
tau = 0.2
kernels = 5:7
epsilons = 1/20

[macro]
dim = {dim}
n_cells = 30
bc = dirichlet_zero
snapshot_times = 0.25 0.5
"""


class TestSettings:
    """Test environment driven settings."""

    def test_defaults(self):
        """Micro resolution defaults depend on the dimension."""
        current = Settings()
        assert current.micro_points_per_wavelength(1) == current.MICRO_POINTS_PER_WAVELENGTH_1D
        assert current.micro_points_per_wavelength(2) == current.MICRO_POINTS_PER_WAVELENGTH_2D

    def test_growth_limit_must_exceed_one(self):
        """A growth bound of 1 or less would stop every run."""
        with pytest.raises(ValidationError):
            Settings(MACRO_GROWTH_LIMIT=1.0)

    def test_environment_override(self, monkeypatch):
        """EFA_ prefixed variables override defaults."""
        monkeypatch.setenv("EFA_WORKERS", "4")
        assert Settings().WORKERS == 4

    def test_invalid_log_format(self):
        """Only json and text renderers exist."""
        with pytest.raises(ValidationError):
            Settings(LOG_FORMAT="xml")

    def test_invalid_cfl_fraction(self):
        """CFL fractions lie strictly inside (0, 1)."""
        with pytest.raises(ValidationError):
            Settings(MICRO_CFL_FRACTION=1.0)


class TestLoadExperiment:
    """Test INI experiment parsing."""

    def test_upscaling_file(self, write_config):
        """Lists, fractions, inline comments and the tau default are parsed."""
        cfg = load_experiment(write_config(UPSCALING))
        assert cfg.experiment.kind is ExperimentKind.UPSCALING
        assert cfg.coefficient.name == "per1d_sin"
        assert cfg.coefficient.params == {"alpha": 1.1}
        assert cfg.averaging.kernels == [(3, 1), (3, 3), (3, 5)]
        assert cfg.averaging.epsilons == pytest.approx([0.02, 0.0125, 0.005])
        assert cfg.averaging.tau == 0.1
        assert cfg.averaging.reuse_policy is ReusePolicy.EFFECTIVE_TENSOR_CACHE

    def test_solution_file(self, write_config):
        """Macro settings and snapshot times are read."""
        cfg = load_experiment(write_config(SOLUTION.format(kind="solution1d", coefficient="locper1d", dim=1)))
        assert cfg.macro.bc is BoundaryCondition.DIRICHLET_ZERO
        assert cfg.macro.snapshot_times == [0.25, 0.5]
        assert cfg.averaging.tau == 0.2
        assert not cfg.dns.enabled

    def test_solution2d_is_two_dimensional(self, write_config):
        """solution2d experiments always run in two dimensions."""
        cfg = load_experiment(write_config(SOLUTION.format(kind="solution2d", coefficient="per2d_exp", dim=1)))
        assert cfg.macro.dim == 2

    def test_solution1d_rejects_dim_2(self, write_config):
        """solution1d experiments are one-dimensional."""
        with pytest.raises(ConfigurationError):
            load_experiment(write_config(SOLUTION.format(kind="solution1d", coefficient="locper1d", dim=2)))

    def test_unknown_section(self, write_config):
        """Sections outside the grammar are rejected."""
        with pytest.raises(ConfigurationError, match="unknown sections"):
            load_experiment(write_config(UPSCALING + "\n[plotting]\ncolor = red\n"))

    @pytest.mark.parametrize(
        "old,new",
        [
            ("kernels = 3:1, 3:3 3:5", "kernels = 3-5"),
            ("kernels = 3:1, 3:3 3:5", "kernels = 0:2"),
            ("epsilons = 1/50, 1/80, 0.005", "epsilons = 1/5"),
            ("kind = upscaling", "kind = calibration"),
            ("alpha = 1.1   # default", "alpha = large"),
        ],
    )
    def test_invalid_values(self, write_config, old, new):
        """Bad kernels, epsilon above eta, unknown kinds and non-numeric parameters."""
        with pytest.raises(ConfigurationError):
            load_experiment(write_config(UPSCALING.replace(old, new)))

    def test_dns_needs_epsilon(self, write_config):
        """An enabled DNS must name its microscale."""
        text = SOLUTION.format(kind="solution1d", coefficient="locper1d", dim=1) + "\n[dns]\nenabled = true\n"
        with pytest.raises(ConfigurationError, match="epsilon"):
            load_experiment(write_config(text))

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
    def test_presets_load(self, path):
        """Every preset under configs/ validates."""
        cfg = load_experiment(path)
        assert cfg.experiment.name == path.stem

    def test_missing_file(self, tmp_path):
        """A missing file is a configuration error."""
        with pytest.raises(ConfigurationError):
            load_experiment(tmp_path / "missing.ini")

    def test_malformed_file(self, write_config):
        """Text without section headers is a configuration error."""
        with pytest.raises(ConfigurationError, match="malformed"):
            load_experiment(write_config("kind = upscaling\n"))


class TestReports:
    """Test error report models."""

    def test_lookup(self):
        """pairs and slope select one kernel."""
        report = ErrorReport(
            name="x",
            rows=[
                ErrorRow(epsilon=0.02, p=3, q=1, error=1e-3),
                ErrorRow(epsilon=0.02, p=3, q=3, error=1e-5),
            ],
            slopes=[SlopeRow(p=3, q=1, slope=2.9), SlopeRow(p=3, q=3, slope=None)],
        )
        assert report.pairs(3, 3) == [(0.02, 1e-5)]
        assert report.slope(3, 1) == 2.9
        assert report.slope(3, 3) is None
        assert report.slope(5, 7) is None

    def test_negative_error_rejected(self):
        """Errors are nonnegative."""
        with pytest.raises(ValidationError):
            ErrorRow(epsilon=0.02, p=3, q=1, error=-1.0)


class TestExceptions:
    """Test the exception hierarchy."""

    def test_cfl_is_configuration_error(self):
        """CFL violations are configuration errors carrying both steps."""
        exc = CFLViolationError(0.2, 0.1, "macro")
        assert isinstance(exc, ConfigurationError)
        assert isinstance(exc, EFAError)
        assert exc.dt == 0.2 and exc.dt_max == 0.1
        assert "macro" in str(exc)

    def test_instability_message(self):
        """The failing step and time appear in the message."""
        exc = InstabilityError("dns", 12, 0.5)
        assert "step 12" in str(exc)
        assert math.isclose(exc.t, 0.5)

    def test_instability_reason(self):
        """Growth failures name their cause instead of non-finite values."""
        exc = InstabilityError("macro", 40, 0.2, reason="amplitude growth")
        assert str(exc).startswith("macro: amplitude growth at step 40")
        assert "non-finite" in str(InstabilityError("macro", 3))


class TestLogging:
    """Test logging setup."""

    def test_level_override(self):
        """An explicit level wins over the configured one."""
        setup_logging("WARNING")
        assert logging.getLogger().level == logging.WARNING
        setup_logging("DEBUG")
        assert logging.getLogger().level == logging.DEBUG
