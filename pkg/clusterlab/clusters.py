"""
clusters.py
-----------
Purpose: Cluster kernels eta_x = (placement_x)_* Q and everything derived from them.

Key ideas:
- ParentClusterLaw Q on the parent space W: a size law plus i.i.d. components
- PlacementMap phi_x carries parent offsets into X near the centre x
  (translation, SE(2) group action, geodesic transport, radial-angular)
- ClusterKernel bundles both; sample_cluster == place_cluster(sample_parent(...))
- Densities and log-derivatives exist only for translation-Gaussian kernels

All samplers are vectorised: the process module draws every cluster of a
configuration in one batch via sample_parent_batch + place_batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Final, NamedTuple, Protocol

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy import stats as sps

from .configuration import ClusterVector
from .geometry import (
    ALGEBRAIC_TOL,
    SE2_ON_R2,
    Euclidean,
    GeometryBackend,
    GeometryError,
    Point,
    rotation_matrix,
)

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]
IndexArray = NDArray[np.intp]

DEFAULT_MAX_SIZE: Final[int] = 64
GAUSSIAN_RANGE_SIGMAS: Final[float] = 6.0
TRUNCATION_WARN: Final[float] = 1e-9


# --- Exceptions ----------------------------------------------------------------

class DensityUnavailableError(RuntimeError):
    """The kernel has no closed-form density (only translation-Gaussian kernels do)."""

    def __init__(self, detail: str = ""):
        super().__init__(f"density unavailable: {detail}".rstrip(": "))
        self.detail = detail


class DimensionMismatchError(ValueError):
    def __init__(self, expected: int, got: int, detail: str = ""):
        super().__init__(f"Dimension mismatch: expected {expected}, got {got}. {detail}".strip())
        self.expected = expected
        self.got = got


# --- Size laws -------------------------------------------------------------------

@dataclass(frozen=True)
class SizeLaw:
    """Distribution of the number of points in a cluster, on {0, ..., n_max}."""
    probabilities: tuple[float, ...]
    label: str = "explicit"
    truncated_mass: float = 0.0

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("size probabilities must be a nonempty nonnegative vector")
        if abs(float(p.sum()) - 1.0) > ALGEBRAIC_TOL:
            raise ValueError(f"size probabilities sum to {p.sum():.15g}, not 1")

    @classmethod
    def fixed(cls, n: int) -> "SizeLaw":
        if n < 0:
            raise ValueError("fixed cluster size must be >= 0")
        probs = [0.0] * n + [1.0]
        return cls(tuple(probs), f"fixed({n})")

    @classmethod
    def poisson(cls, mean: float, n_max: int = DEFAULT_MAX_SIZE) -> "SizeLaw":
        if mean < 0:
            raise ValueError("poisson mean must be >= 0")
        pmf = sps.poisson.pmf(np.arange(n_max + 1), mean)
        tail = float(sps.poisson.sf(n_max, mean))
        if tail > TRUNCATION_WARN:
            log.warning("size_law_truncated", mean=mean, n_max=n_max, truncated_mass=tail)
        pmf = pmf / pmf.sum()
        # renormalising can leave a ~1ulp excess; fold it into the mode
        pmf[int(np.argmax(pmf))] += 1.0 - pmf.sum()
        return cls(tuple(float(v) for v in pmf), f"poisson({mean:g})", tail)

    @classmethod
    def explicit(cls, probabilities: list[float]) -> "SizeLaw":
        return cls(tuple(float(v) for v in probabilities), "explicit")

    @property
    def n_max(self) -> int:
        return len(self.probabilities) - 1

    @property
    def support(self) -> IndexArray:
        return np.flatnonzero(np.asarray(self.probabilities) > 0)

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.n_max + 1), self.probabilities))

    def is_degenerate(self) -> bool:
        return self.support.size == 1

    def log_prob(self, n: int) -> float:
        if n < 0 or n > self.n_max or self.probabilities[n] == 0:
            return -math.inf
        return math.log(self.probabilities[n])

    def sample(self, rng: np.random.Generator, size: int) -> IndexArray:
        if self.is_degenerate():
            return np.full(size, int(self.support[0]), dtype=np.intp)
        return rng.choice(self.n_max + 1, size=size, p=np.asarray(self.probabilities)).astype(np.intp)


# --- Component samplers (laws on one coordinate of W) ----------------------------

class Component(Protocol):
    space: str
    width: int
    support_radius: float

    def sample(self, rng: np.random.Generator, n: int) -> Array: ...

    def norms(self, w: Array) -> Array: ...

    def reach(self) -> float: ...


@dataclass(frozen=True)
class GaussianComponent:
    """w ~ N(mean, sigma^2 I) in R^d."""
    sigma: float
    dim: int
    mean: tuple[float, ...] | None = None
    space: str = "euclidean"
    support_radius: float = math.inf

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("gaussian sigma must be positive")

    @property
    def width(self) -> int:
        return self.dim

    @property
    def mean_array(self) -> Array:
        return np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, dtype=float)

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        return self.mean_array + self.sigma * rng.standard_normal((n, self.dim))

    def norms(self, w: Array) -> Array:
        return np.linalg.norm(w, axis=1)

    def reach(self) -> float:
        return GAUSSIAN_RANGE_SIGMAS * self.sigma + float(np.linalg.norm(self.mean_array))

    def log_density(self, w: Array) -> Array:
        z = (np.atleast_2d(w) - self.mean_array) / self.sigma
        return -0.5 * np.sum(z ** 2, axis=1) - self.dim * (math.log(self.sigma) + 0.5 * math.log(2 * math.pi))

    def log_density_gradient(self, w: Array) -> Array:
        return -(np.atleast_2d(w) - self.mean_array) / self.sigma ** 2


@dataclass(frozen=True)
class DiracComponent:
    at: tuple[float, ...]
    space: str = "euclidean"

    @property
    def width(self) -> int:
        return len(self.at)

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.at))

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        return np.tile(np.asarray(self.at, dtype=float), (n, 1))

    def norms(self, w: Array) -> Array:
        return np.linalg.norm(w, axis=1)

    def reach(self) -> float:
        return self.support_radius


@dataclass(frozen=True)
class UniformBallComponent:
    """Uniform on the Euclidean ball of `radius` (Matern-type offsets)."""
    radius: float
    dim: int
    space: str = "euclidean"

    @property
    def width(self) -> int:
        return self.dim

    @property
    def support_radius(self) -> float:
        return float(self.radius)

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / self.dim)
        return g * r[:, None]

    def norms(self, w: Array) -> Array:
        return np.linalg.norm(w, axis=1)

    def reach(self) -> float:
        return self.support_radius


@dataclass(frozen=True)
class RotationComponent:
    """
    SE(2) rotations g = (angle, xi): a rotation by `angle` about a random centre
    xi ~ N(xi_mean, xi_sigma^2 I). angle=None draws the angle uniformly.
    Rows are (angle, xi1, xi2).
    """
    xi_mean: tuple[float, float]
    xi_sigma: float
    angle: float | None = None
    space: str = "se2"
    width: int = 3
    support_radius: float = math.inf

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        if self.angle is None:
            angles = rng.uniform(-math.pi, math.pi, n)
        else:
            angles = np.full(n, float(self.angle))
        xi = np.asarray(self.xi_mean, dtype=float) + self.xi_sigma * rng.standard_normal((n, 2))
        return np.column_stack([angles, xi])

    def norms(self, w: Array) -> Array:
        return np.linalg.norm(w[:, 1:], axis=1)

    def reach(self) -> float:
        return math.inf


@dataclass(frozen=True)
class TangentGaussianComponent:
    """Gaussian in the tangent space at the base point x0 of `geometry` (ambient coordinates)."""
    sigma: float
    geometry: GeometryBackend
    base: tuple[float, ...]
    space: str = "tangent"
    support_radius: float = math.inf

    @property
    def width(self) -> int:
        return self.geometry.coord_dim

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        frame = self.geometry.tangent_basis(np.asarray(self.base, dtype=float)[None, :])[0]
        return self.sigma * rng.standard_normal((n, self.geometry.chart_dim)) @ frame

    def norms(self, w: Array) -> Array:
        base = np.broadcast_to(np.asarray(self.base, dtype=float), w.shape)
        return self.geometry.norm(base, w)

    def reach(self) -> float:
        return GAUSSIAN_RANGE_SIGMAS * self.sigma


@dataclass(frozen=True)
class RadialComponent:
    """Radii r >= 0 for radial-angular placement: fixed(r) | uniform(a, b) | half_normal(scale)."""
    law: str
    params: tuple[float, ...]
    space: str = "radii"
    width: int = 1

    def __post_init__(self) -> None:
        if self.law not in ("fixed", "uniform", "half_normal"):
            raise ValueError(f"unknown radial law '{self.law}'")
        if any(p < 0 for p in self.params):
            raise ValueError("radial law parameters must be nonnegative")

    @property
    def support_radius(self) -> float:
        if self.law == "fixed":
            return float(self.params[0])
        if self.law == "uniform":
            return float(self.params[1])
        return math.inf

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        if self.law == "fixed":
            r = np.full(n, float(self.params[0]))
        elif self.law == "uniform":
            r = rng.uniform(self.params[0], self.params[1], n)
        else:
            r = np.abs(self.params[0] * rng.standard_normal(n))
        return r[:, None]

    def norms(self, w: Array) -> Array:
        return np.abs(w[:, 0])

    def reach(self) -> float:
        if self.law == "half_normal":
            return GAUSSIAN_RANGE_SIGMAS * self.params[0]
        return self.support_radius


@dataclass(frozen=True)
class ParentClusterLaw:
    """Q on W: N ~ size, then N i.i.d. components."""
    size: SizeLaw
    component: Component

    @property
    def support_radius(self) -> float:
        return self.component.support_radius

    @property
    def space(self) -> str:
        return self.component.space

    def draw_components(self, rng: np.random.Generator, n: int) -> Array:
        w = self.component.sample(rng, n)
        if math.isfinite(self.support_radius) and n:
            if np.any(self.component.norms(w) > self.support_radius * (1.0 + ALGEBRAIC_TOL) + ALGEBRAIC_TOL):
                raise GeometryError("a sampled component left the declared support radius")
        return w


# --- Placement maps --------------------------------------------------------------------

class PlacementMap(Protocol):
    variant: str
    stochastic: bool

    def place(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array: ...


@dataclass(frozen=True)
class TranslationPlacement:
    """phi_x(w) = x + w on R^d."""
    geometry: GeometryBackend
    variant: str = "translation"
    stochastic: bool = False

    def place(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array:
        if w.shape[1] != x_rows.shape[1]:
            raise DimensionMismatchError(x_rows.shape[1], w.shape[1], "translation offsets")
        return x_rows + w

    def pullback(self, x_rows: Array, y: Array) -> Array:
        return y - x_rows


@dataclass(frozen=True)
class GroupActionPlacement:
    """phi_x(g) = g.x = A(x - xi) + xi for g = (angle, xi) in SE(2), on R^2."""
    geometry: GeometryBackend
    variant: str = "group_action"
    stochastic: bool = False

    def __post_init__(self) -> None:
        if self.geometry.geometry_id != SE2_ON_R2:
            raise GeometryError("group_action placement needs the se2-on-r2 geometry")

    def place(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array:
        if w.shape[1] != 3:
            raise DimensionMismatchError(3, w.shape[1], "group elements are (angle, xi1, xi2)")
        c, s = np.cos(w[:, 0]), np.sin(w[:, 0])
        d = x_rows - w[:, 1:]
        rotated = np.column_stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]])
        return rotated + w[:, 1:]


@dataclass(frozen=True)
class GeodesicTransportPlacement:
    """phi_x(w) = exp_x(transport_{x0 -> x} w) for w in T_{x0} X."""
    geometry: GeometryBackend
    base: tuple[float, ...]
    variant: str = "geodesic_transport"
    stochastic: bool = False

    def place(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array:
        if w.shape[1] != self.geometry.coord_dim:
            raise DimensionMismatchError(self.geometry.coord_dim, w.shape[1], "tangent offsets")
        x0 = np.broadcast_to(np.asarray(self.base, dtype=float), x_rows.shape)
        return self.geometry.exp(x_rows, self.geometry.transport(x0, x_rows, w))

    def pullback(self, x_rows: Array, y: Array) -> Array:
        if not isinstance(self.geometry, Euclidean):
            raise DensityUnavailableError("geodesic pullback is only closed-form on Euclidean space")
        return y - x_rows


@dataclass(frozen=True)
class RadialAngularPlacement:
    """y uniform on the geodesic sphere of radius r about x; consumes rng."""
    geometry: GeometryBackend
    variant: str = "radial_angular"
    stochastic: bool = True

    def place(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array:
        if rng is None:
            raise ValueError("radial_angular placement needs an rng for the angular part")
        if w.shape[1] != 1:
            raise DimensionMismatchError(1, w.shape[1], "radii")
        if x_rows.shape[0] == 0:
            return np.zeros((0, self.geometry.coord_dim))
        return self.geometry.sphere(x_rows, w[:, 0], rng)


# --- Kernel -------------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterKernel:
    parent: ParentClusterLaw
    placement: PlacementMap
    geometry: GeometryBackend
    declared_range: float | None = field(default=None)

    @property
    def gaussian_sigma(self) -> float | None:
        if isinstance(self.placement, TranslationPlacement) and isinstance(self.parent.component, GaussianComponent):
            return self.parent.component.sigma
        return None

    @property
    def cluster_range(self) -> float:
        """R used for plus-sampling; Gaussian offsets use 6 sigma."""
        if self.declared_range is not None:
            return float(self.declared_range)
        return float(self.parent.component.reach())

    def place_batch(self, x_rows: Array, w: Array, rng: np.random.Generator | None = None) -> Array:
        if w.shape[0] == 0:
            return np.zeros((0, self.geometry.coord_dim))
        return self.placement.place(x_rows, w, rng)


def sample_parent(parent: ParentClusterLaw, rng: np.random.Generator) -> ClusterVector:
    n = int(parent.size.sample(rng, 1)[0])
    return ClusterVector(parent.draw_components(rng, n).reshape(n, parent.component.width), parent.space)


def sample_parent_batch(parent: ParentClusterLaw, n_clusters: int, rng: np.random.Generator) -> tuple[Array, IndexArray]:
    """All parent clusters of a configuration at once: (components, owner index)."""
    sizes = parent.size.sample(rng, n_clusters)
    owner = np.repeat(np.arange(n_clusters, dtype=np.intp), sizes)
    w = parent.draw_components(rng, int(sizes.sum())).reshape(-1, parent.component.width)
    return w, owner


def place_cluster(
    kernel: ClusterKernel, x: Point, w_bar: ClusterVector, rng: np.random.Generator | None = None
) -> ClusterVector:
    """Diagonal lift of phi_x to a whole cluster."""
    if x.geometry_id != kernel.geometry.geometry_id:
        raise GeometryError(f"centre lives on {x.geometry_id}, kernel on {kernel.geometry.geometry_id}")
    if len(w_bar) == 0:
        return ClusterVector(np.zeros((0, kernel.geometry.coord_dim)), kernel.geometry.geometry_id)
    x_rows = np.broadcast_to(x.array, (len(w_bar), x.array.size))
    return ClusterVector(kernel.place_batch(x_rows, w_bar.components, rng), kernel.geometry.geometry_id)


def sample_cluster(kernel: ClusterKernel, x: Point, rng: np.random.Generator) -> ClusterVector:
    return place_cluster(kernel, x, sample_parent(kernel.parent, rng), rng)


def sample_clusters(kernel: ClusterKernel, centres: Array, rng: np.random.Generator) -> tuple[Array, IndexArray]:
    """One cluster per centre row; returns (cluster points, owner index)."""
    w, owner = sample_parent_batch(kernel.parent, centres.shape[0], rng)
    return kernel.place_batch(centres[owner], w, rng), owner


# --- Densities -------------------------------------------------------------------------------

def _require_gaussian(kernel: ClusterKernel) -> GaussianComponent:
    if kernel.gaussian_sigma is None:
        raise DensityUnavailableError(
            f"{kernel.placement.variant} kernel with {type(kernel.parent.component).__name__} components"
        )
    return kernel.parent.component  # type: ignore[return-value]


def cluster_log_density(kernel: ClusterKernel, x: Point, y_bar: ClusterVector) -> tuple[float, Array]:
    """log h_x(y_bar) on the stratum X^n and its gradient in y_bar (shape (n, d))."""
    comp = _require_gaussian(kernel)
    y = y_bar.components
    if len(y_bar) and y.shape[1] != comp.dim:
        raise DimensionMismatchError(comp.dim, y.shape[1], "cluster points")
    value = kernel.parent.size.log_prob(len(y_bar))
    if len(y_bar) == 0:
        return value, np.zeros((0, comp.dim))
    w = y - x.array
    return value + float(np.sum(comp.log_density(w))), comp.log_density_gradient(w)


def log_density_gradient_batch(kernel: ClusterKernel, x_rows: Array, y: Array) -> Array:
    """beta_eta(x, y)_i = -(y_i - x - m) / sigma^2, row-wise."""
    comp = _require_gaussian(kernel)
    return comp.log_density_gradient(y - x_rows)


def log_density_batch(kernel: ClusterKernel, x_rows: Array, y: Array) -> Array:
    """Per-point Gaussian log-density log q(y_i - x); sizes are not included."""
    comp = _require_gaussian(kernel)
    return comp.log_density(y - x_rows)


# --- SE(2) conditional translation ------------------------------------------------------------

class GroupActionShift(NamedTuple):
    point_shift: Array
    parameter_shift: Array


def group_action_shift(angle: float, x: Point | Array) -> GroupActionShift:
    """
    For the rotation action g.x = A(x - xi) + xi with fixed A != I:
    eta_x is eta_0 translated by A x in X, and the xi-preimage of a set
    shifts by -(I - A)^{-1} A x.
    """
    a = rotation_matrix(angle)
    eye = np.eye(2)
    if np.allclose(a, eye, atol=ALGEBRAIC_TOL):
        raise GeometryError("the conditional translation needs a non-trivial rotation")
    xv = x.array if isinstance(x, Point) else np.asarray(x, dtype=float)
    ax = a @ xv
    return GroupActionShift(ax, -np.linalg.solve(eye - a, ax))
