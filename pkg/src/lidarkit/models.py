from __future__ import annotations

import math
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .geometry import DetectorGeometry, TimeGrid
from .medium import MediumModel, PiecewiseLinearProfile, SeparablePhase, TabulatedPhase
from .quadrature import QuadratureConfig

Mode = Literal["single", "double", "mc", "validate"]
Shape = Literal["isotropic", "rayleigh", "henyey_greenstein"]
MediumKind = Literal["homogeneous", "tabulated", "layer"]
PhaseMode = Literal["exact", "backscatter", "half_aperture"]
Estimator = Literal["analog", "next_event"]

SCHEMA_VERSION = "1.0"


# ------------------------------------------------------------
# Medium description
# ------------------------------------------------------------

class ProfileSpec(BaseModel):
    """Piecewise-linear profile; a repeated height encodes a jump."""
    model_config = ConfigDict(extra="forbid")

    z: List[float] = Field(..., min_length=1, description="Node heights, from 0, non-decreasing")
    values: List[float] = Field(..., min_length=1, description="Node values, non-negative")

    @field_validator("z")
    @classmethod
    def validate_z(cls, v: List[float]) -> List[float]:
        if any(not math.isfinite(x) for x in v):
            raise ValueError("heights must be finite")
        if v[0] != 0.0:
            raise ValueError("first height must be 0")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("heights must be non-decreasing")
        return v

    @field_validator("values")
    @classmethod
    def validate_values(cls, v: List[float]) -> List[float]:
        if any(not (math.isfinite(x) and x >= 0.0) for x in v):
            raise ValueError("values must be finite and non-negative")
        return v

    @model_validator(mode="after")
    def check_lengths(self) -> "ProfileSpec":
        if len(self.z) != len(self.values):
            raise ValueError(f"z has {len(self.z)} nodes but values has {len(self.values)}")
        return self

    def build(self) -> PiecewiseLinearProfile:
        return PiecewiseLinearProfile(self.z, self.values)


class SeparablePhaseSpec(BaseModel):
    """``sigma(mu, z) = scattering(z) * p(mu)`` with an analytic shape."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["separable"] = "separable"
    shape: Shape = "isotropic"
    g: float = Field(0.0, gt=-1.0, lt=1.0, description="Henyey-Greenstein asymmetry")
    scattering: ProfileSpec

    def build(self) -> SeparablePhase:
        return SeparablePhase(self.scattering.build(), self.shape, self.g)


class TablePhaseSpec(BaseModel):
    """Differential cross-section on a (mu, z) grid, one row per cosine."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["table"] = "table"
    mu: List[float] = Field(..., min_length=2, description="Cosines, -1 .. 1 increasing")
    z: List[float] = Field(..., min_length=1, description="Heights, from 0 increasing")
    table: List[List[float]] = Field(..., description="len(mu) rows of len(z) values, 1/(length sr)")

    @field_validator("mu")
    @classmethod
    def validate_mu(cls, v: List[float]) -> List[float]:
        if v[0] != -1.0 or v[-1] != 1.0:
            raise ValueError("cosines must span [-1, 1]")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("cosines must be strictly increasing")
        return v

    @field_validator("z")
    @classmethod
    def validate_z(cls, v: List[float]) -> List[float]:
        if v[0] != 0.0:
            raise ValueError("first height must be 0")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("heights must be strictly increasing")
        return v

    @field_validator("table")
    @classmethod
    def validate_table(cls, v: List[List[float]]) -> List[List[float]]:
        if any(not (math.isfinite(x) and x >= 0.0) for row in v for x in row):
            raise ValueError("table values must be finite and non-negative")
        return v

    @model_validator(mode="after")
    def check_shape(self) -> "TablePhaseSpec":
        if len(self.table) != len(self.mu):
            raise ValueError(f"table has {len(self.table)} rows, expected one per cosine ({len(self.mu)})")
        for i, row in enumerate(self.table):
            if len(row) != len(self.z):
                raise ValueError(f"table row {i} has {len(row)} values, expected {len(self.z)}")
        return self

    def build(self) -> TabulatedPhase:
        return TabulatedPhase(self.mu, self.z, self.table)


PhaseSpec = Annotated[Union[SeparablePhaseSpec, TablePhaseSpec], Field(discriminator="kind")]


class MediumSpec(BaseModel):
    """Medium description.

    ``homogeneous`` and ``layer`` take scalar coefficients (``layer`` adds a
    thickness); ``tabulated`` takes an extinction profile and a phase model.
    """
    model_config = ConfigDict(extra="forbid")

    kind: MediumKind
    sigma_t: Optional[float] = Field(None, ge=0.0, description="Extinction, 1/length")
    scattering: Optional[float] = Field(None, ge=0.0, description="∫σ dΩ, 1/length")
    shape: Shape = "isotropic"
    g: float = Field(0.0, gt=-1.0, lt=1.0)
    thickness: Optional[float] = Field(None, gt=0.0, description="Layer thickness")
    extinction: Optional[ProfileSpec] = None
    phase: Optional[PhaseSpec] = None

    @model_validator(mode="after")
    def check_kind_fields(self) -> "MediumSpec":
        if self.kind in ("homogeneous", "layer"):
            missing = [n for n in ("sigma_t", "scattering") if getattr(self, n) is None]
            if self.kind == "layer" and self.thickness is None:
                missing.append("thickness")
            if missing:
                raise ValueError(f"{self.kind} medium needs {', '.join(missing)}")
            if self.extinction is not None or self.phase is not None:
                raise ValueError(f"{self.kind} medium takes scalar coefficients, not profiles")
        else:
            if self.extinction is None or self.phase is None:
                raise ValueError("tabulated medium needs extinction and phase")
        return self

    def build(self) -> MediumModel:
        """Construct the medium; raises ``DomainError`` on physical violations."""
        if self.kind == "homogeneous":
            return MediumModel.homogeneous(self.sigma_t, self.scattering, self.shape, self.g)
        if self.kind == "layer":
            return MediumModel.layer(self.sigma_t, self.scattering, self.thickness, self.shape, self.g)
        return MediumModel(self.extinction.build(), self.phase.build(), "tabulated")


# ------------------------------------------------------------
# Run configuration
# ------------------------------------------------------------

class GeometrySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rho0: float = Field(..., gt=0.0, description="Aperture radius")
    # the upper limit pi/2 is a physical invariant checked by DetectorGeometry
    theta0: Optional[float] = Field(None, gt=0.0, description="Half-angle, radians")
    epsilon: Optional[float] = Field(None, gt=0.0, description="tan(theta0)")

    @model_validator(mode="after")
    def one_angle(self) -> "GeometrySpec":
        if (self.theta0 is None) == (self.epsilon is None):
            raise ValueError("give exactly one of theta0 and epsilon")
        return self

    def build(self) -> DetectorGeometry:
        if self.epsilon is not None:
            return DetectorGeometry.from_epsilon(self.rho0, self.epsilon)
        return DetectorGeometry(self.rho0, self.theta0)


class TimeGridSpec(BaseModel):
    """Explicit ``times`` or a generated ``t_min .. t_max`` grid."""
    model_config = ConfigDict(extra="forbid")

    times: Optional[List[float]] = None
    t_min: Optional[float] = Field(None, gt=0.0)
    t_max: Optional[float] = Field(None, gt=0.0)
    n: Optional[int] = Field(None, ge=1)
    spacing: Literal["linear", "log"] = "linear"

    @field_validator("times")
    @classmethod
    def validate_times(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if not v:
            raise ValueError("times must not be empty")
        if any(not (math.isfinite(t) and t > 0.0) for t in v):
            raise ValueError("times must be finite and positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("times must be strictly increasing")
        return v

    @model_validator(mode="after")
    def one_form(self) -> "TimeGridSpec":
        generated = (self.t_min, self.t_max, self.n)
        if self.times is not None:
            if any(x is not None for x in generated):
                raise ValueError("give either times or t_min/t_max/n, not both")
            return self
        if any(x is None for x in generated):
            raise ValueError("give times, or all of t_min, t_max and n")
        if self.n > 1 and not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")
        return self

    def build(self) -> TimeGrid:
        if self.times is not None:
            return TimeGrid(self.times)
        if self.n == 1:
            return TimeGrid([self.t_min])
        if self.spacing == "log":
            return TimeGrid.log(self.t_min, self.t_max, self.n)
        return TimeGrid.linear(self.t_min, self.t_max, self.n)


class QuadratureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rel_tol: float = Field(1e-6, gt=0.0)
    abs_tol: float = Field(1e-30, ge=0.0)
    max_subdivisions: int = Field(20000, ge=1)
    corner_substitution: bool = True
    order: int = Field(7, ge=2, le=40, description="Gauss-Legendre points per axis")

    def build(self) -> QuadratureConfig:
        return QuadratureConfig(
            rel_tol=self.rel_tol,
            abs_tol=self.abs_tol,
            max_subdivisions=self.max_subdivisions,
            corner_substitution=self.corner_substitution,
            order=self.order,
        )


class MonteCarloSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    histories: int = Field(100000, ge=1)
    blocks: int = Field(16, ge=1)
    seed: int = Field(20240611, ge=0)
    estimator: Estimator = "next_event"
    horizon: Optional[float] = Field(None, gt=0.0, description="Defaults to the last bin edge")
    workers: int = Field(1, ge=1)
    bin_width: Optional[float] = Field(None, gt=0.0, description="Fixed tally bin width")


class DiagnosticsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    smallness_threshold: float = Field(0.01, gt=0.0)
    far_field_margin: float = Field(1.0, gt=0.0, description="Required (t/2)/(rho0/eps)")


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = Field(None, description="Signal file; stdout when omitted")
    format: Literal["csv", "json"] = "csv"


class RunConfig(BaseModel):
    """Top-level run configuration (JSON or TOML)."""
    model_config = ConfigDict(extra="forbid")

    schema_version: str = SCHEMA_VERSION
    mode: Mode = "single"
    phase_mode: PhaseMode = "exact"
    medium: Optional[MediumSpec] = None
    # Resolved relative to the config file by config.load_config.
    medium_path: Optional[str] = None
    geometry: GeometrySpec
    time_grid: TimeGridSpec
    quadrature: QuadratureSpec = Field(default_factory=QuadratureSpec)
    montecarlo: MonteCarloSpec = Field(default_factory=MonteCarloSpec)
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def one_medium(self) -> "RunConfig":
        if (self.medium is None) == (self.medium_path is None):
            raise ValueError("give exactly one of medium and medium_path")
        return self


# ------------------------------------------------------------
# Results
# ------------------------------------------------------------

NonNegative = Annotated[float, Field(ge=0.0)]


class SignalRow(BaseModel):
    """Analytic results at one return time."""
    model_config = ConfigDict(extra="forbid")

    t: float
    far_field_ok: bool
    far_field_margin: float
    i1: NonNegative
    i1_bin: Optional[NonNegative] = Field(None, description="I1 averaged over the tally bin")
    smallness_q: Optional[float] = None
    smallness_ok: Optional[bool] = None
    i21: Optional[NonNegative] = None
    i21_error: Optional[NonNegative] = None
    i21_subdivisions: Optional[int] = None
    d0_empty: Optional[bool] = None
    i22_bound: Optional[NonNegative] = None
    i23_bound: Optional[NonNegative] = None


class McRow(BaseModel):
    """Monte Carlo rates in one tally bin, keyed by category."""
    model_config = ConfigDict(extra="forbid")

    t: float
    bin_lo: float
    bin_hi: float
    rate: Dict[str, NonNegative]
    stderr: Dict[str, NonNegative]
    count: Dict[str, int]
    ratio: Dict[str, float] = Field(default_factory=dict, description="I2/I1, I3+/I2")


class ValidationRow(BaseModel):
    """Analytic versus Monte Carlo comparison in one bin.

    An order is graded only when the bin holds enough detections of it;
    otherwise its z-score is ``None`` and it does not affect ``ok``.
    """
    model_config = ConfigDict(extra="forbid")

    t: float
    graded_order1: bool
    graded_order2: bool
    z_order1: Optional[float] = None
    z_order2: Optional[float] = None
    rel_diff_order2: Optional[float] = None
    d0_remainder: NonNegative
    remainder_bound: Optional[NonNegative]
    remainder_ok: bool
    ok: bool


class ReturnSignal(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Mode
    analytic: List[SignalRow] = Field(default_factory=list)
    montecarlo: List[McRow] = Field(default_factory=list)
    validation: List[ValidationRow] = Field(default_factory=list)


class RunSummary(BaseModel):
    """Reproducibility record written next to the signal file."""
    model_config = ConfigDict(extra="forbid")

    contract: str
    mode: Mode
    config_hash: str
    seed: Optional[int] = None
    histories: Optional[int] = None
    versions: Dict[str, str]
    rows: int
    violations: List[str] = Field(default_factory=list)
    chi2: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    passed: Optional[bool] = None
