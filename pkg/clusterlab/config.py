"""
config.py
---------
Purpose: Load and validate an experiment file (YAML) into typed settings.

Key ideas:
- Fixed top-level sections: seed, replicas, threads, output, geometry, reference,
  centres, kernel, cluster_range, test, budget, telemetry (see docs/config.md)
- Named families only (no embedded code); names and aliases resolve through
  families.canonical_family before the discriminated unions see them
- Every validation problem becomes a ConfigError carrying the YAML line and
  the dotted field path
- config_hash: SHA-256 of the sorted-key JSON of the validated config,
  minus the scheduling fields threads and output
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import orjson
import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from .families import UnknownFamilyError, canonical_family


# --- Exception ---------------------------------------------------------------

class ConfigError(ValueError):
    """Experiment file could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None, source: str = "<config>"):
        where = f"{source}:{line}" if line is not None else source
        prefix = f"{where}: {field}: " if field else f"{where}: "
        super().__init__(prefix + message)
        self.line = line
        self.field = field
        self.source = source


# --- Family resolution --------------------------------------------------------

def _family(kind: str, key: str = "family"):
    """Before-validator that rewrites `key` to the canonical family name."""

    def resolve(value: Any) -> Any:
        if isinstance(value, dict) and key in value:
            try:
                return {**value, key: canonical_family(kind, str(value[key]))}
            except UnknownFamilyError as exc:
                # pydantic only wraps ValueError into ValidationError
                raise ValueError(str(exc).strip("\"'")) from exc
        return value

    return BeforeValidator(resolve)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- Regions -------------------------------------------------------------------

class BoxSpec(_Section):
    kind: Literal["box"] = "box"
    lower: list[float]
    upper: list[float]

    @model_validator(mode="after")
    def _check(self) -> "BoxSpec":
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower must not exceed upper")
        return self


class BallSpec(_Section):
    kind: Literal["ball"]
    centre: list[float]
    radius: float = Field(gt=0)


RegionSpec = Annotated[Union[BoxSpec, BallSpec], Field(discriminator="kind")]


# --- Geometry and reference measure ---------------------------------------------

class GeometrySpec(_Section):
    kind: Literal["euclidean", "hyperbolic2", "se2-on-r2"] = "euclidean"
    dim: int = Field(default=2, ge=1, le=3)


class ConstantIntensitySpec(_Section):
    family: Literal["constant"]
    rate: float = Field(ge=0)


class LinearIntensitySpec(_Section):
    family: Literal["linear"]
    base: float
    slope: float
    axis: int = Field(default=0, ge=0)


class GaussianBumpIntensitySpec(_Section):
    family: Literal["gaussian_bump"]
    floor: float = Field(default=0.0, ge=0)
    peak: float = Field(ge=0)
    centre: list[float]
    width: float = Field(gt=0)


class StepIntensitySpec(_Section):
    family: Literal["step"]
    low: float = Field(ge=0)
    high: float = Field(ge=0)
    threshold: float
    axis: int = Field(default=0, ge=0)


IntensitySpec = Annotated[
    Union[ConstantIntensitySpec, LinearIntensitySpec, GaussianBumpIntensitySpec, StepIntensitySpec],
    Field(discriminator="family"),
    _family("intensity"),
]


class ReferenceSpec(_Section):
    window: BoxSpec
    intensity: IntensitySpec
    intensity_upper_bound: float | None = Field(default=None, gt=0)


# --- Centres ---------------------------------------------------------------------

class ZeroPotentialSpec(_Section):
    family: Literal["zero"]


class HardCorePotentialSpec(_Section):
    family: Literal["hard_core"]
    radius: float = Field(gt=0)


class StraussPotentialSpec(_Section):
    family: Literal["strauss"]
    radius: float = Field(gt=0)
    gamma: float = Field(ge=0, le=1)


PotentialSpec = Annotated[
    Union[ZeroPotentialSpec, HardCorePotentialSpec, StraussPotentialSpec],
    Field(discriminator="family"),
    _family("potential"),
]


class PoissonCentresSpec(_Section):
    process: Literal["poisson"]


class GibbsCentresSpec(_Section):
    process: Literal["gibbs"]
    potential: PotentialSpec
    inverse_temperature: float = Field(default=1.0, ge=0)
    mh_sweeps: int = Field(default=200, ge=1)


class LatticeCentresSpec(_Section):
    process: Literal["lattice"]
    points: list[list[float]] | None = None
    csv: str | None = None

    @model_validator(mode="after")
    def _one_source(self) -> "LatticeCentresSpec":
        if (self.points is None) == (self.csv is None):
            raise ValueError("give exactly one of `points` or `csv`")
        return self


CentresSpec = Annotated[
    Union[PoissonCentresSpec, GibbsCentresSpec, LatticeCentresSpec], Field(discriminator="process")
]


# --- Kernel ----------------------------------------------------------------------

class FixedSizeSpec(_Section):
    family: Literal["fixed"]
    n: int = Field(ge=0)


class PoissonSizeSpec(_Section):
    family: Literal["poisson"]
    mean: float = Field(ge=0)
    n_max: int = Field(default=64, ge=1)


class ExplicitSizeSpec(_Section):
    family: Literal["explicit"]
    probabilities: list[float] = Field(min_length=1)


SizeSpec = Annotated[
    Union[FixedSizeSpec, PoissonSizeSpec, ExplicitSizeSpec], Field(discriminator="family"), _family("size")
]


class FixedRadialSpec(_Section):
    family: Literal["fixed"]
    radius: float = Field(ge=0)


class UniformRadialSpec(_Section):
    family: Literal["uniform"]
    low: float = Field(ge=0)
    high: float = Field(ge=0)


class HalfNormalRadialSpec(_Section):
    family: Literal["half_normal"]
    scale: float = Field(gt=0)


RadialSpec = Annotated[
    Union[FixedRadialSpec, UniformRadialSpec, HalfNormalRadialSpec], Field(discriminator="family"), _family("radial")
]


class GaussianComponentSpec(_Section):
    family: Literal["gaussian"]
    sigma: float = Field(gt=0)
    mean: list[float] | None = None


class DiracComponentSpec(_Section):
    family: Literal["dirac"]
    at: list[float] | None = None


class UniformBallComponentSpec(_Section):
    family: Literal["uniform_ball"]
    radius: float = Field(gt=0)


class RotationComponentSpec(_Section):
    family: Literal["rotation"]
    xi_mean: list[float] = Field(min_length=2, max_length=2)
    xi_sigma: float = Field(ge=0)
    angle: float | None = None


class TangentGaussianComponentSpec(_Section):
    family: Literal["tangent_gaussian"]
    sigma: float = Field(gt=0)


class RadialComponentSpec(_Section):
    family: Literal["radial"]
    law: RadialSpec


ComponentSpec = Annotated[
    Union[
        GaussianComponentSpec,
        DiracComponentSpec,
        UniformBallComponentSpec,
        RotationComponentSpec,
        TangentGaussianComponentSpec,
        RadialComponentSpec,
    ],
    Field(discriminator="family"),
    _family("component"),
]


class PlacementSpec(_Section):
    family: Literal["translation", "group_action", "geodesic_transport", "radial_angular"]
    base: list[float] | None = None


class KernelSpec(_Section):
    size: SizeSpec
    component: ComponentSpec
    placement: Annotated[PlacementSpec, _family("placement")]


# --- Functions used by the tests --------------------------------------------------

class IndicatorFunctionSpec(_Section):
    family: Literal["indicator"]
    scale: float = Field(default=1.0, ge=0)
    region: RegionSpec


class SmoothBumpFunctionSpec(_Section):
    family: Literal["smooth_bump"]
    centre: list[float]
    radius: float = Field(gt=0)
    height: float = Field(default=1.0, ge=0)


TestFunctionSpec = Annotated[
    Union[IndicatorFunctionSpec, SmoothBumpFunctionSpec], Field(discriminator="family"), _family("test_function")
]


class OuterSpec(_Section):
    family: Literal["identity", "exp_neg", "tanh_mix"]
    weights: list[float] = Field(min_length=1)
    offset: float = 0.0


class CylinderSpec(_Section):
    outer: Annotated[OuterSpec, _family("outer")]
    inner: list[SmoothBumpFunctionSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _arity(self) -> "CylinderSpec":
        if len(self.outer.weights) != len(self.inner):
            raise ValueError("outer.weights must have one entry per inner function")
        return self


class FieldSpec(_Section):
    centre: list[float]
    radius: float = Field(gt=0)
    direction: list[float]


class FlowSpec(_Section):
    field: FieldSpec
    step: float


class FieldTermSpec(_Section):
    G: CylinderSpec
    field: FieldSpec


# --- Test section ------------------------------------------------------------------

class SampleTest(_Section):
    operation: Literal["sample"]
    pipeline: Literal["project", "varpi"] = "project"


class LaplaceTest(_Section):
    operation: Literal["laplace-check"]
    f: TestFunctionSpec
    n_outer: int = Field(default=2 ** 14, ge=2)
    n_inner: int = Field(default=64, ge=1)


class MarkedLaplaceTest(_Section):
    operation: Literal["marked-laplace-check"]
    f: TestFunctionSpec
    n_inner: int = Field(default=64, ge=1)


class VarpiTest(_Section):
    operation: Literal["varpi-check"]
    f: TestFunctionSpec
    alpha: float = Field(default=0.001, gt=0, lt=1)


class DropletTest(_Section):
    operation: Literal["droplet-check"]
    shape: RegionSpec
    n_mc: int = Field(default=10_000, ge=1_000)
    n_outer: int = Field(default=200, ge=2)
    n_inner: int = Field(default=2_000, ge=1_000)
    probe_samples: int = Field(default=200, ge=2)


class QiTest(_Section):
    operation: Literal["qi-check"]
    flows: list[FlowSpec] = Field(default_factory=list)
    F: CylinderSpec


class IbpTest(_Section):
    operation: Literal["ibp-check"]
    F: CylinderSpec
    field: FieldSpec


class IbpGeneralTest(_Section):
    operation: Literal["ibp-general-check"]
    F1: CylinderSpec
    F2: CylinderSpec
    terms: list[FieldTermSpec] = Field(min_length=1)


class DirichletTest(_Section):
    operation: Literal["dirichlet-check"]
    F1: CylinderSpec
    F2: CylinderSpec


class CorrTest(_Section):
    operation: Literal["corr-check"]
    order: Literal[1, 2] = 1
    regions: list[RegionSpec] = Field(min_length=1, max_length=2)
    n_mc: int = Field(default=100_000, ge=2)
    use_reference: bool = True

    @model_validator(mode="after")
    def _arity(self) -> "CorrTest":
        if len(self.regions) != self.order:
            raise ValueError("give one region per order")
        return self


class MomentTest(_Section):
    operation: Literal["moment-check"]
    f: TestFunctionSpec
    max_order: int = Field(default=2, ge=1, le=4)
    lyapunov_r: float = Field(default=1.0, gt=0)
    lyapunov_delta: float = Field(default=1.0, gt=0)


class PairCorrelationTest(_Section):
    operation: Literal["pair-correlation"]
    r_values: list[float] = Field(min_length=1)
    bandwidth: float = Field(gt=0)


class DynamicsTest(_Section):
    operation: Literal["dynamics"]
    f: TestFunctionSpec
    time_step: float = Field(ge=0)
    n_steps: int = Field(ge=0)
    stride: int = Field(default=1, ge=1)


class OuVarianceTest(_Section):
    operation: Literal["ou-variance-check"]
    time_step: float = Field(ge=0)
    n_steps: int = Field(ge=0)
    method: Literal["euler", "exact"] = "euler"


class ReversibilityTest(_Section):
    operation: Literal["reversibility-check"]
    F1: CylinderSpec
    F2: CylinderSpec
    time_step: float = Field(ge=0)
    n_steps: int = Field(ge=0)


class PropernessTest(_Section):
    operation: Literal["properness"]
    region: RegionSpec
    bins: int = Field(default=20, ge=1)


TestSpec = Annotated[
    Union[
        SampleTest,
        LaplaceTest,
        MarkedLaplaceTest,
        VarpiTest,
        DropletTest,
        QiTest,
        IbpTest,
        IbpGeneralTest,
        DirichletTest,
        CorrTest,
        MomentTest,
        PairCorrelationTest,
        DynamicsTest,
        OuVarianceTest,
        ReversibilityTest,
        PropernessTest,
    ],
    Field(discriminator="operation"),
]


# --- Ambient sections ---------------------------------------------------------------

class BudgetSpec(_Section):
    max_points: int = Field(default=0, ge=0)
    warn_threshold_pct: float = Field(default=0.8, gt=0, le=1)
    enforce_mode: Literal["strict", "soft"] = "strict"


class TelemetrySpec(_Section):
    log_level: Literal["debug", "info", "warning", "error"] = "info"
    json_logs: bool = False
    exporter: Literal["none", "console", "otlp"] = "none"
    service_name: str = "clusterlab"
    endpoint: str | None = None
    headers: str | None = None


class ExperimentConfig(_Section):
    seed: int = Field(ge=0, lt=2 ** 64)
    replicas: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)
    output: str = "out"
    geometry: GeometrySpec = GeometrySpec()
    reference: ReferenceSpec
    centres: CentresSpec
    kernel: KernelSpec
    cluster_range: float | None = Field(default=None, gt=0)
    test: TestSpec
    budget: BudgetSpec = BudgetSpec()
    telemetry: TelemetrySpec = TelemetrySpec()


# --- Loading -------------------------------------------------------------------------

def _line_for(node: yaml.Node | None, loc: tuple[Any, ...]) -> int | None:
    """Walk the composed YAML tree along a pydantic error location; 1-based line of the deepest match."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if getattr(k, "value", None) == str(part)), None)
            if match is None:
                # union tags (e.g. the operation name) appear in loc but not in the file
                continue
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            continue
        line = node.start_mark.line + 1
    return line


def _field_path(loc: tuple[Any, ...], data: Any) -> str:
    parts: list[str] = []
    cursor = data
    for part in loc:
        if isinstance(cursor, dict) and part in cursor:
            cursor = cursor[part]
            parts.append(str(part))
        elif isinstance(cursor, list) and isinstance(part, int) and part < len(cursor):
            cursor = cursor[part]
            parts.append(str(part))
        elif not parts or isinstance(part, str) and not isinstance(cursor, (dict, list)):
            parts.append(str(part))
    return ".".join(parts) if parts else "<root>"


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line, None, source) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections", 1, None, source)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(first["loc"])
        raise ConfigError(first["msg"], _line_for(root, loc), _field_path(loc, data), source) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, None, str(p)) from exc
    return parse_config(text, str(p))


def with_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    replicas: int | None = None,
    threads: int | None = None,
    output: str | None = None,
) -> ExperimentConfig:
    """Apply CLI flag overrides; the result is re-validated."""
    update = {
        k: v
        for k, v in {"seed": seed, "replicas": replicas, "threads": threads, "output": output}.items()
        if v is not None
    }
    if not update:
        return cfg
    data = cfg.model_dump(mode="json")
    data.update(update)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], None, ".".join(str(p) for p in first["loc"]), "<command line>") from exc


# Scheduling only; results never depend on them.
_UNHASHED = {"threads", "output"}


def config_hash(cfg: ExperimentConfig) -> str:
    payload = orjson.dumps(cfg.model_dump(mode="json", exclude=_UNHASHED), option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(payload).hexdigest()
