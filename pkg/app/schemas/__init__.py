"""Pydantic schemas for experiment files and reports."""

from app.schemas.experiment import (  # noqa: F401
    CheckResult,
    ErrorReport,
    ErrorRow,
    ExperimentConfig,
    SlopeRow,
    load_experiment,
)

__all__ = [
    "CheckResult",
    "ErrorReport",
    "ErrorRow",
    "ExperimentConfig",
    "SlopeRow",
    "load_experiment",
]
