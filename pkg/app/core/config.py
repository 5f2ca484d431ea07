"""Application configuration using Pydantic settings.

Configuration is loaded from environment variables or .env file.
Numerical defaults (resolution, CFL fractions, tolerances) live here so a
run can be retuned without touching experiment files.
"""

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings.

    All settings can be overridden via environment variables with the
    ``EFA_`` prefix, e.g. ``EFA_WORKERS=4`` or ``EFA_LOG_FORMAT=json``.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="EFA_",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    PROJECT_NAME: str = "Equation-Free Multiscale Wave Solver"
    PROJECT_DESCRIPTION: str = (
        "Equation-free upscaling for wave equations in non-divergence form"
    )
    VERSION: str = "0.1.0"
    ENVIRONMENT: str = "development"  # development, ci, production

    # Execution
    WORKERS: int = 1
    OUTPUT_DIR: str = "results"

    # Media
    SUP_NORM_INFLATION: float = 1.05
    SUP_NORM_SAMPLES_PER_UNIT: int = 64

    # Micro solver
    MICRO_POINTS_PER_WAVELENGTH_1D: int = 64
    MICRO_POINTS_PER_WAVELENGTH_2D: int = 16
    MICRO_CFL_FRACTION: float = 0.9

    # Macro solver
    MACRO_CFL_MARGIN: float = 1.1
    LSQ_HALF_WIDTH: int = 2  # patch is (2m+1)^d macro points
    MACRO_GROWTH_LIMIT: float = 10.0  # unforced runs: max |U| over max|U^0| + t max|V^0|

    # Direct numerical simulation
    DNS_CFL_FRACTION: float = 0.9
    DNS_POINTS_PER_WAVELENGTH: int = 10

    # Reference computations and analysis
    HARMONIC_MEAN_RTOL: float = 1e-10
    HARMONIC_MEAN_START: int = 16
    SLOPE_NOISE_FLOOR: float = 1e-12

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "text"  # json or text

    @field_validator("LOG_FORMAT")
    @classmethod
    def check_log_format(cls, v: str) -> str:
        """Only the two renderers configured in app.core.logging are valid."""
        if v not in ("json", "text"):
            raise ValueError(f"LOG_FORMAT must be 'json' or 'text', got {v!r}")
        return v

    @field_validator("MACRO_GROWTH_LIMIT")
    @classmethod
    def check_growth_limit(cls, v: float) -> float:
        if v <= 1.0:
            raise ValueError("MACRO_GROWTH_LIMIT must exceed 1")
        return v

    @field_validator("MICRO_CFL_FRACTION", "DNS_CFL_FRACTION")
    @classmethod
    def check_cfl_fraction(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("CFL fractions must lie in (0, 1)")
        return v

    def micro_points_per_wavelength(self, dim: int) -> int:
        """Default micro resolution for a problem of the given dimension."""
        if dim == 1:
            return self.MICRO_POINTS_PER_WAVELENGTH_1D
        return self.MICRO_POINTS_PER_WAVELENGTH_2D


# Create global settings instance
settings = Settings()
