"""Pydantic schemas for experiment files and error reports."""
import configparser
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigurationError
from app.models.enums import (
    BoundaryCondition,
    ExperimentKind,
    HessianStencil,
    InitialProfile,
    ReusePolicy,
)


def _split(value: Any) -> Any:
    """Comma or whitespace separated text to a list; other values pass through."""
    if isinstance(value, str):
        return [item for item in value.replace(",", " ").split() if item]
    return value


class ExperimentSection(BaseModel):
    """[experiment]"""
    kind: ExperimentKind = Field(..., description="Experiment family")
    name: str = Field(..., min_length=1, description="Prefix of every output file")


class CoefficientSection(BaseModel):
    """[coefficient]: registry name plus free numeric parameters."""
    name: str = Field(..., min_length=1, description="Builtin coefficient name")
    params: dict[str, float] = Field(default_factory=dict, description="Factory parameters")


class AveragingSection(BaseModel):
    """[averaging]"""
    eta: float = Field(0.1, gt=0, description="Spatial window width")
    tau: Optional[float] = Field(None, gt=0, description="Temporal window width, eta by default")
    kernels: list[tuple[int, int]] = Field(
        default_factory=lambda: [(3, 5)], description="(p, q) pairs written as p:q"
    )
    epsilons: list[float] = Field(..., min_length=1, description="Microscale values to sweep")
    points_per_wavelength: Optional[int] = Field(None, ge=10, description="Micro resolution")
    reuse_policy: ReusePolicy = ReusePolicy.EFFECTIVE_TENSOR_CACHE
    slope_bins: Optional[int] = Field(
        None, ge=3, description="Also fit slopes through the worst error of this many epsilon bins"
    )

    @field_validator("kernels", mode="before")
    @classmethod
    def parse_kernels(cls, v: Any) -> Any:
        items = _split(v)
        if isinstance(items, list) and items and isinstance(items[0], str):
            pairs = []
            for item in items:
                p, sep, q = item.partition(":")
                if not sep:
                    raise ValueError(f"kernel {item!r} must be written as p:q")
                pairs.append((int(p), int(q)))
            return pairs
        return items

    @field_validator("epsilons", mode="before")
    @classmethod
    def parse_epsilons(cls, v: Any) -> Any:
        items = _split(v)
        if isinstance(items, list):
            return [_fraction(item) if isinstance(item, str) else item for item in items]
        return items

    @field_validator("epsilons")
    @classmethod
    def check_epsilons(cls, v: list[float]) -> list[float]:
        if any(e <= 0 for e in v):
            raise ValueError("epsilons must be positive")
        return v

    @field_validator("kernels")
    @classmethod
    def check_kernels(cls, v: list[tuple[int, int]]) -> list[tuple[int, int]]:
        if not v:
            raise ValueError("at least one kernel is required")
        for p, q in v:
            if p < 1 or q < 0:
                raise ValueError(f"invalid kernel {p}:{q}")
        return v

    @model_validator(mode="after")
    def default_tau(self) -> "AveragingSection":
        if self.tau is None:
            self.tau = self.eta
        if max(self.epsilons) > min(self.eta, self.tau):
            raise ValueError("every epsilon must be at most eta and tau")
        return self


class MacroSection(BaseModel):
    """[macro]"""
    dim: int = Field(1, ge=1, le=2, description="Spatial dimension")
    length: float = Field(1.0, gt=0, description="Domain side L")
    n_cells: int = Field(50, ge=5, description="Macro cells per axis")
    dt: Optional[float] = Field(None, gt=0, description="Macro time step")
    cfl_fraction: float = Field(0.8, gt=0, lt=1, description="Fraction of the CFL limit when dt is unset")
    T: float = Field(1.0, ge=0, description="Final time")
    bc: BoundaryCondition = BoundaryCondition.PERIODIC
    stencil: HessianStencil = HessianStencil.CENTERED
    snapshot_times: list[float] = Field(default_factory=list, description="Extra snapshot times")

    @field_validator("snapshot_times", mode="before")
    @classmethod
    def parse_times(cls, v: Any) -> Any:
        return _split(v)


class InitialSection(BaseModel):
    """[initial]"""
    profile: InitialProfile = InitialProfile.GAUSSIAN
    center: list[float] = Field(default_factory=lambda: [0.5], description="Gaussian center")
    sigma: float = Field(0.08, gt=0, description="Gaussian standard deviation")
    velocity: float = Field(0.0, description="Constant initial velocity")

    @field_validator("center", mode="before")
    @classmethod
    def parse_center(cls, v: Any) -> Any:
        return _split(v)


class ReferenceSection(BaseModel):
    """[reference]"""
    ratio: Optional[float] = Field(None, gt=0, description="Frequency ratio of the periodized twin")
    a0: Optional[float] = Field(None, gt=0, description="Literature homogenized value")


class DNSSection(BaseModel):
    """[dns]"""
    enabled: bool = False
    epsilon: Optional[float] = Field(None, gt=0, description="Microscale of the resolved run")
    points_per_wavelength: int = Field(10, ge=10)
    tolerance: Optional[float] = Field(None, gt=0, description="Largest accepted relative distance")


class OutputSection(BaseModel):
    """[output]"""
    directory: Optional[str] = None


class ExperimentConfig(BaseModel):
    """A complete experiment file."""
    experiment: ExperimentSection
    coefficient: CoefficientSection
    averaging: AveragingSection
    macro: MacroSection = Field(default_factory=MacroSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    dns: DNSSection = Field(default_factory=DNSSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        kind = self.experiment.kind
        if kind is ExperimentKind.SOLUTION2D and self.macro.dim != 2:
            self.macro.dim = 2
        if kind is ExperimentKind.SOLUTION1D and self.macro.dim != 1:
            raise ValueError("solution1d experiments are one-dimensional")
        if self.dns.enabled and self.dns.epsilon is None:
            raise ValueError("[dns] epsilon is required when the DNS is enabled")
        if self.dns.enabled and self.dns.epsilon > min(self.averaging.eta, self.averaging.tau):
            raise ValueError("[dns] epsilon must be at most eta and tau")
        return self


def _fraction(text: str) -> float:
    """Parse '0.01' or '1/320'."""
    num, sep, den = text.partition("/")
    return float(num) / float(den) if sep else float(text)


def _coerce(text: str) -> Union[str, float]:
    try:
        return _fraction(text)
    except ValueError:
        return text


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read an INI experiment file.

    Raises:
        ConfigurationError: Missing file, unknown section or invalid values
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with path.open(encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read experiment file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed experiment file {path}: {exc}") from exc

    known = set(ExperimentConfig.model_fields)
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigurationError(f"unknown sections in {path}: {', '.join(sorted(unknown))}")

    data: dict[str, Any] = {name: dict(parser.items(name)) for name in parser.sections()}
    if "coefficient" in data:
        section = data["coefficient"]
        name = section.pop("name", None)
        try:
            params = {key: float(_coerce(value)) for key, value in section.items()}
        except ValueError as exc:
            raise ConfigurationError(f"coefficient parameters must be numeric: {exc}") from exc
        data["coefficient"] = {"name": name, "params": params}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid experiment file {path}:\n{exc}") from exc


class ErrorRow(BaseModel):
    """One sweep point."""
    epsilon: float
    p: int
    q: int
    error: float = Field(..., ge=0)


class SlopeRow(BaseModel):
    """Fitted rate for one kernel."""
    p: int
    q: int
    slope: Optional[float] = None
    envelope_slope: Optional[float] = None


class ErrorReport(BaseModel):
    """Errors per (epsilon, p, q) with fitted log-log slopes."""
    name: str
    norm: str = Field("discrete_l2", description="Norm the errors are measured in")
    rows: list[ErrorRow] = Field(default_factory=list)
    slopes: list[SlopeRow] = Field(default_factory=list)
    extras: dict[str, float] = Field(default_factory=dict, description="Auxiliary scalar results")

    model_config = ConfigDict(validate_assignment=True)

    def pairs(self, p: int, q: int) -> list[tuple[float, float]]:
        return [(row.epsilon, row.error) for row in self.rows if row.p == p and row.q == q]

    def slope(self, p: int, q: int) -> Optional[float]:
        for row in self.slopes:
            if row.p == p and row.q == q:
                return row.slope
        return None

    def envelope_slope(self, p: int, q: int) -> Optional[float]:
        for row in self.slopes:
            if row.p == p and row.q == q:
                return row.envelope_slope
        return None


class CheckResult(BaseModel):
    """Outcome of one acceptance criterion."""
    criterion: str = Field(..., description="Number and short name, e.g. 1_harmonic_mean_1d")
    value: float = Field(..., description="Measured quantity compared against the bound")
    passed: bool
    detail: str = ""
