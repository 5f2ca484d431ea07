"""Pytest configuration and fixtures.

This file contains shared fixtures used across all tests.
"""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from app.models.coefficient import CoefficientField
from app.models.kernel import Kernel
from app.services.coefficient_service import builtin_coefficient
from app.services.kernel_service import build_kernel
from app.services.upscale_service import UpscaleConfig


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for property-style tests."""
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def kernel_35() -> Kernel:
    """The (p, q) = (3, 5) kernel used by most averaging tests."""
    return build_kernel(3, 5)


@pytest.fixture
def sin_field() -> CoefficientField:
    """1.1 + sin(2 pi x / eps) at eps = 0.02."""
    return builtin_coefficient("per1d_sin", 0.02)


@pytest.fixture
def constant_field() -> Callable[..., CoefficientField]:
    """Factory for constant media, coarse enough for cheap micro solves."""

    def make(c: float = 1.0, dim: int = 1, epsilon: float = 0.1) -> CoefficientField:
        return builtin_coefficient("constant", epsilon, c=c, dim=dim)

    return make


@pytest.fixture
def upscale_cfg(kernel_35: Kernel) -> UpscaleConfig:
    """eta = tau = 0.1 with the (3, 5) kernel in space and time."""
    return UpscaleConfig(kernel_space=kernel_35, kernel_time=kernel_35, eta=0.1, tau=0.1)


@pytest.fixture
def coarse_cfg(kernel_35: Kernel) -> UpscaleConfig:
    """Ten points per wavelength, for constant media and 2D runs."""
    return UpscaleConfig(
        kernel_space=kernel_35, kernel_time=kernel_35, eta=0.1, tau=0.1, points_per_wavelength=10
    )


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str, str], Path]:
    """Write an INI experiment file into tmp_path."""

    def write(text: str, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
