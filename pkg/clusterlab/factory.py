# clusterlab/factory.py
"""
Turn validated config sections into model objects.

Everything here is a plain mapping from a named family plus parameters to the
matching class; no sampling happens at build time.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .calculus import (
    BumpField,
    BumpFlow,
    CylinderFunction,
    Diffeomorphism,
    ExpNegOuter,
    IdentityDiffeomorphism,
    LinearOuter,
    TanhOuter,
    compose_diffeomorphisms,
)
from .centres import (
    CentreProcess,
    ConstantIntensity,
    GaussianBumpIntensity,
    GibbsCentres,
    HardCorePotential,
    LatticeCentres,
    LinearIntensity,
    PoissonCentres,
    ReferenceMeasure,
    StepIntensity,
    StraussPotential,
    ZeroPotential,
)
from .clusters import (
    ClusterKernel,
    DiracComponent,
    GaussianComponent,
    GeodesicTransportPlacement,
    GroupActionPlacement,
    ParentClusterLaw,
    RadialAngularPlacement,
    RadialComponent,
    RotationComponent,
    SizeLaw,
    TangentGaussianComponent,
    TranslationPlacement,
    UniformBallComponent,
)
from .config import (
    BallSpec,
    BoxSpec,
    ConfigError,
    ConstantIntensitySpec,
    CylinderSpec,
    DiracComponentSpec,
    ExperimentConfig,
    ExplicitSizeSpec,
    FieldSpec,
    FixedRadialSpec,
    FixedSizeSpec,
    FlowSpec,
    GaussianBumpIntensitySpec,
    GaussianComponentSpec,
    GeometrySpec,
    GibbsCentresSpec,
    HardCorePotentialSpec,
    HalfNormalRadialSpec,
    IndicatorFunctionSpec,
    KernelSpec,
    LatticeCentresSpec,
    LinearIntensitySpec,
    PoissonSizeSpec,
    ReferenceSpec,
    RotationComponentSpec,
    StepIntensitySpec,
    StraussPotentialSpec,
    TangentGaussianComponentSpec,
    UniformBallComponentSpec,
    UniformRadialSpec,
)
from .configuration import Configuration
from .geometry import Ball, Box, Euclidean, GeometryBackend, Hyperbolic2, Region, make_geometry
from .output import read_points_csv
from .process import ClusterProcessModel
from .stats import IndicatorTest, SmoothBumpTest, TestFunction


def build_geometry(spec: GeometrySpec) -> GeometryBackend:
    return make_geometry(spec.kind, spec.dim)


def build_region(spec: BoxSpec | BallSpec) -> Region:
    if isinstance(spec, BoxSpec):
        return Box(tuple(spec.lower), tuple(spec.upper))
    return Ball(tuple(spec.centre), spec.radius)


def _intensity(spec, window: Box):
    if isinstance(spec, ConstantIntensitySpec):
        return ConstantIntensity(spec.rate), spec.rate
    if isinstance(spec, LinearIntensitySpec):
        if spec.axis >= window.dim:
            raise ConfigError(f"axis {spec.axis} out of range for a {window.dim}-D window", field="reference.intensity.axis")
        ends = [spec.base + spec.slope * window.lower[spec.axis], spec.base + spec.slope * window.upper[spec.axis]]
        if min(ends) < 0:
            raise ConfigError("linear intensity is negative on the window", field="reference.intensity")
        return LinearIntensity(spec.base, spec.slope, spec.axis), max(ends)
    if isinstance(spec, GaussianBumpIntensitySpec):
        return GaussianBumpIntensity(spec.floor, spec.peak, tuple(spec.centre), spec.width), spec.floor + spec.peak
    if isinstance(spec, StepIntensitySpec):
        return StepIntensity(spec.low, spec.high, spec.threshold, spec.axis), max(spec.low, spec.high)
    raise ConfigError(f"unsupported intensity {type(spec).__name__}", field="reference.intensity")


def build_reference(spec: ReferenceSpec, geometry: GeometryBackend) -> ReferenceMeasure:
    window = Box(tuple(spec.window.lower), tuple(spec.window.upper))
    intensity, natural_bound = _intensity(spec.intensity, window)
    bound = spec.intensity_upper_bound if spec.intensity_upper_bound is not None else natural_bound
    if bound <= 0:
        raise ConfigError("intensity is identically zero; set intensity_upper_bound", field="reference")
    try:
        return ReferenceMeasure(window, intensity, float(bound), geometry)
    except ValueError as exc:
        raise ConfigError(str(exc), field="reference.window") from exc


def _potential(spec):
    if isinstance(spec, HardCorePotentialSpec):
        return HardCorePotential(spec.radius)
    if isinstance(spec, StraussPotentialSpec):
        return StraussPotential(spec.radius, spec.gamma)
    return ZeroPotential()


def build_centres(cfg: ExperimentConfig, reference: ReferenceMeasure, base_dir: Path | None = None) -> CentreProcess:
    spec = cfg.centres
    if isinstance(spec, GibbsCentresSpec):
        return GibbsCentres(reference, _potential(spec.potential), spec.inverse_temperature, spec.mh_sweeps)
    if isinstance(spec, LatticeCentresSpec):
        if spec.csv is not None:
            path = Path(spec.csv)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            try:
                points, _ = read_points_csv(path)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read lattice points: {exc}", field="centres.csv") from exc
        else:
            points = np.asarray(spec.points, dtype=float)
        # lattice points are chart coordinates, like every point file
        geometry = reference.geometry
        if points.size == 0:
            points = np.zeros((0, geometry.chart_dim))
        if points.ndim != 2 or points.shape[1] != geometry.chart_dim:
            raise ConfigError(f"lattice points need {geometry.chart_dim} chart coordinates each", field="centres")
        coords = geometry.from_chart(points) if points.shape[0] else np.zeros((0, geometry.coord_dim))
        return LatticeCentres(Configuration(coords, reference.geometry_id, reference.window))
    return PoissonCentres(reference)


def _size(spec) -> SizeLaw:
    if isinstance(spec, FixedSizeSpec):
        return SizeLaw.fixed(spec.n)
    if isinstance(spec, PoissonSizeSpec):
        return SizeLaw.poisson(spec.mean, spec.n_max)
    if isinstance(spec, ExplicitSizeSpec):
        try:
            return SizeLaw.explicit(spec.probabilities)
        except ValueError as exc:
            raise ConfigError(str(exc), field="kernel.size.probabilities") from exc
    raise ConfigError(f"unsupported size law {type(spec).__name__}", field="kernel.size")


def _base_point(geometry: GeometryBackend, base: list[float] | None) -> tuple[float, ...]:
    if base is not None:
        return tuple(float(v) for v in geometry.point(base).coords)
    if isinstance(geometry, Hyperbolic2):
        return geometry.origin().coords
    return (0.0,) * geometry.coord_dim


def _component(spec, geometry: GeometryBackend, base: tuple[float, ...]):
    dim = geometry.chart_dim
    if isinstance(spec, GaussianComponentSpec):
        return GaussianComponent(spec.sigma, dim, tuple(spec.mean) if spec.mean is not None else None)
    if isinstance(spec, DiracComponentSpec):
        return DiracComponent(tuple(spec.at) if spec.at is not None else (0.0,) * dim)
    if isinstance(spec, UniformBallComponentSpec):
        return UniformBallComponent(spec.radius, dim)
    if isinstance(spec, RotationComponentSpec):
        return RotationComponent((spec.xi_mean[0], spec.xi_mean[1]), spec.xi_sigma, spec.angle)
    if isinstance(spec, TangentGaussianComponentSpec):
        return TangentGaussianComponent(spec.sigma, geometry, base)
    law = spec.law
    if isinstance(law, FixedRadialSpec):
        return RadialComponent("fixed", (law.radius,))
    if isinstance(law, UniformRadialSpec):
        if law.low > law.high:
            raise ConfigError("uniform radial law needs low <= high", field="kernel.component.law")
        return RadialComponent("uniform", (law.low, law.high))
    if isinstance(law, HalfNormalRadialSpec):
        return RadialComponent("half_normal", (law.scale,))
    raise ConfigError(f"unsupported component {type(spec).__name__}", field="kernel.component")


_PLACEMENT_SPACES = {
    "translation": {"euclidean"},
    "group_action": {"se2"},
    "geodesic_transport": {"tangent", "euclidean"},
    "radial_angular": {"radii"},
}


def build_kernel(spec: KernelSpec, geometry: GeometryBackend, declared_range: float | None = None) -> ClusterKernel:
    family = spec.placement.family
    try:
        base = _base_point(geometry, spec.placement.base)
    except ValueError as exc:
        raise ConfigError(str(exc), field="kernel.placement.base") from exc
    component = _component(spec.component, geometry, base)
    flat = isinstance(geometry, Euclidean)
    if component.space not in _PLACEMENT_SPACES[family] or (component.space == "euclidean" and not flat):
        raise ConfigError(
            f"{family} placement cannot use a '{component.space}' component on {geometry.geometry_id}",
            field="kernel.placement",
        )
    try:
        if family == "translation":
            placement = TranslationPlacement(geometry)
        elif family == "group_action":
            placement = GroupActionPlacement(geometry)
        elif family == "geodesic_transport":
            placement = GeodesicTransportPlacement(geometry, base)
        else:
            placement = RadialAngularPlacement(geometry)
        return ClusterKernel(ParentClusterLaw(_size(spec.size), component), placement, geometry, declared_range)
    except ValueError as exc:
        raise ConfigError(str(exc), field="kernel") from exc


def build_model(cfg: ExperimentConfig, base_dir: Path | None = None) -> ClusterProcessModel:
    geometry = build_geometry(cfg.geometry)
    reference = build_reference(cfg.reference, geometry)
    centres = build_centres(cfg, reference, base_dir)
    kernel = build_kernel(cfg.kernel, geometry, cfg.cluster_range)
    try:
        return ClusterProcessModel(geometry, reference, centres, kernel, cfg.cluster_range)
    except ValueError as exc:
        raise ConfigError(str(exc), field="cluster_range") from exc


def build_test_function(spec) -> TestFunction:
    if isinstance(spec, IndicatorFunctionSpec):
        return IndicatorTest(spec.scale, build_region(spec.region))
    return SmoothBumpTest(tuple(spec.centre), spec.radius, spec.height)


def build_cylinder(spec: CylinderSpec) -> CylinderFunction:
    weights = tuple(spec.outer.weights)
    if spec.outer.family == "exp_neg":
        outer = ExpNegOuter(weights)
    elif spec.outer.family == "tanh_mix":
        outer = TanhOuter(weights)
    else:
        outer = LinearOuter(weights, spec.outer.offset)
    inner = tuple(SmoothBumpTest(tuple(g.centre), g.radius, g.height) for g in spec.inner)
    return CylinderFunction(outer, inner)


def build_field(spec: FieldSpec) -> BumpField:
    return BumpField(tuple(spec.centre), spec.radius, tuple(spec.direction))


def build_diffeomorphism(flows: list[FlowSpec]) -> Diffeomorphism:
    """flows[0] is applied last: phi = flows[0] o flows[1] o ... ; no flows gives the identity."""
    phi: Diffeomorphism = IdentityDiffeomorphism()
    for flow in reversed(flows):
        try:
            step = BumpFlow(build_field(flow.field), flow.step)
        except ValueError as exc:
            raise ConfigError(str(exc), field="test.flows") from exc
        phi = step if isinstance(phi, IdentityDiffeomorphism) else compose_diffeomorphisms(step, phi)
    return phi
