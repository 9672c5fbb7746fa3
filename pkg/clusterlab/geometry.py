"""
geometry.py
-----------
Purpose: The manifold backends every sampler runs on.

Key ideas:
- Euclidean R^d, the hyperbolic plane (hyperboloid model) and SE(2) acting on R^2
- Points carry the id of their geometry; mixing geometries is an error, never a coercion
- Windows are boxes in *chart* coordinates; the hyperboloid chart is (p1, p2)
- Batch methods work on (n, coord_dim) arrays; the Point/TangentVector API wraps them

Tolerances are module constants: GEOMETRIC_TOL for metric identities,
ALGEBRAIC_TOL for group algebra.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Final, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

GEOMETRIC_TOL: Final[float] = 1e-9
ALGEBRAIC_TOL: Final[float] = 1e-12

EUCLIDEAN: Final[str] = "euclidean"
HYPERBOLIC2: Final[str] = "hyperbolic2"
SE2_ON_R2: Final[str] = "se2-on-r2"

Array = NDArray[np.float64]


# --- Exceptions --------------------------------------------------------------

class GeometryError(ValueError):
    """Invalid geometric input (off-manifold point, bad radius, wrong backend)."""


class GeometryMismatchError(GeometryError):
    """Two objects living on different geometries were combined."""

    def __init__(self, left: str, right: str, detail: str = ""):
        super().__init__(f"Geometry mismatch: '{left}' vs '{right}'. {detail}".strip())
        self.left = left
        self.right = right


def _check_same(left: str, right: str, detail: str = "") -> None:
    if left != right:
        raise GeometryMismatchError(left, right, detail)


# --- Value types -------------------------------------------------------------

@dataclass(frozen=True)
class Point:
    """A location on a geometry backend; coords are chart coords (ambient for the hyperboloid)."""
    coords: tuple[float, ...]
    geometry_id: str

    @property
    def array(self) -> Array:
        return np.asarray(self.coords, dtype=float)


@dataclass(frozen=True)
class TangentVector:
    base: Point
    components: tuple[float, ...]

    @property
    def array(self) -> Array:
        return np.asarray(self.components, dtype=float)


def _wrap_angle(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(float(angle), 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def rotation_matrix(angle: float) -> Array:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class GroupElement:
    """
    Element of SE(2) acting on R^2 by x -> R(angle) x + translation.

    The rotation of angle A about a centre xi, x -> A(x - xi) + xi, is
    GroupElement.rotation_about(A, xi).
    """
    angle: float
    translation: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "angle", _wrap_angle(self.angle))
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls(0.0, (0.0, 0.0))

    @classmethod
    def rotation_about(cls, angle: float, centre: Sequence[float]) -> "GroupElement":
        xi = np.asarray(centre, dtype=float)
        t = xi - rotation_matrix(angle) @ xi
        return cls(angle, (t[0], t[1]))

    @property
    def matrix(self) -> Array:
        return rotation_matrix(self.angle)

    def compose(self, other: "GroupElement") -> "GroupElement":
        """self . other (apply `other` first)."""
        t = self.matrix @ np.asarray(other.translation) + np.asarray(self.translation)
        return GroupElement(self.angle + other.angle, (t[0], t[1]))

    def inverse(self) -> "GroupElement":
        rot_t = self.matrix.T
        t = -rot_t @ np.asarray(self.translation)
        return GroupElement(-self.angle, (t[0], t[1]))

    def apply(self, coords: ArrayLike) -> Array:
        xs = np.atleast_2d(np.asarray(coords, dtype=float))
        return xs @ self.matrix.T + np.asarray(self.translation)


# --- Regions in chart coordinates ---------------------------------------------

@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper):
            raise GeometryError("Box bounds have different dimensions")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise GeometryError(f"Box lower {self.lower} exceeds upper {self.upper}")

    @classmethod
    def of(cls, lower: ArrayLike, upper: ArrayLike) -> "Box":
        return cls(tuple(float(v) for v in np.ravel(lower)), tuple(float(v) for v in np.ravel(upper)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> Array:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> Array:
        return np.asarray(self.upper, dtype=float)

    @property
    def widths(self) -> Array:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, chart: ArrayLike) -> NDArray[np.bool_]:
        u = np.atleast_2d(np.asarray(chart, dtype=float))
        return np.all((u >= self.lo) & (u <= self.hi), axis=1)

    def dilate(self, r: float) -> "Box":
        return Box.of(self.lo - r, self.hi + r)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def bounding_box(self) -> "Box":
        return self

    def corners(self) -> Array:
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> Array:
        return self.lo + rng.random((n, self.dim)) * self.widths


@dataclass(frozen=True)
class Ball:
    """Euclidean ball in chart coordinates."""
    centre: tuple[float, ...]
    radius: float

    @property
    def dim(self) -> int:
        return len(self.centre)

    def contains(self, chart: ArrayLike) -> NDArray[np.bool_]:
        u = np.atleast_2d(np.asarray(chart, dtype=float))
        return np.sum((u - np.asarray(self.centre)) ** 2, axis=1) <= self.radius ** 2

    def bounding_box(self) -> Box:
        c = np.asarray(self.centre, dtype=float)
        return Box.of(c - self.radius, c + self.radius)

    @property
    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d


Region = Box | Ball


# --- Backends ----------------------------------------------------------------

class GeometryBackend(ABC):
    """Riemannian structure of X plus the chart the windows are expressed in."""

    kind: str
    geometry_id: str
    chart_dim: int
    coord_dim: int

    # -- points ------------------------------------------------------------

    def point(self, coords: ArrayLike) -> Point:
        arr = np.asarray(coords, dtype=float).ravel()
        self.validate(arr[None, :])
        return Point(tuple(float(v) for v in arr), self.geometry_id)

    def tangent(self, base: Point, components: ArrayLike) -> TangentVector:
        _check_same(base.geometry_id, self.geometry_id)
        comp = np.asarray(components, dtype=float).ravel()
        self.validate_tangent(base.array[None, :], comp[None, :])
        return TangentVector(base, tuple(float(v) for v in comp))

    def validate(self, coords: Array) -> None:
        if coords.ndim != 2 or coords.shape[1] != self.coord_dim:
            raise GeometryError(
                f"{self.geometry_id} expects {self.coord_dim} coordinates, got shape {coords.shape}"
            )

    def validate_tangent(self, base: Array, comps: Array) -> None:
        if comps.shape[-1] != self.coord_dim:
            raise GeometryError(f"{self.geometry_id} tangents need {self.coord_dim} components")

    def _coords(self, p: Point) -> Array:
        _check_same(p.geometry_id, self.geometry_id)
        return p.array[None, :]

    # -- chart -------------------------------------------------------------

    def to_chart(self, coords: ArrayLike) -> Array:
        return np.atleast_2d(np.asarray(coords, dtype=float))

    def from_chart(self, chart: ArrayLike) -> Array:
        return np.atleast_2d(np.asarray(chart, dtype=float))

    def volume_density(self, chart: ArrayLike) -> Array:
        """Riemannian volume density relative to Lebesgue measure in the chart."""
        return np.ones(np.atleast_2d(chart).shape[0])

    volume_density_bound: float = 1.0

    def chart_dilation(self, box: Box, r: float) -> Box:
        """A chart box containing every point within distance r of `box`."""
        return box.dilate(r)

    # -- metric primitives (batch) -----------------------------------------

    @abstractmethod
    def inner(self, base: Array, u: Array, v: Array) -> Array: ...

    def norm(self, base: Array, v: Array) -> Array:
        return np.sqrt(np.maximum(self.inner(base, v, v), 0.0))

    @abstractmethod
    def distances(self, p: Array, q: Array) -> Array: ...

    @abstractmethod
    def exp(self, p: Array, v: Array) -> Array: ...

    @abstractmethod
    def transport(self, p: Array, q: Array, v: Array) -> Array: ...

    @abstractmethod
    def tangent_basis(self, p: Array) -> Array:
        """(n, chart_dim, coord_dim) orthonormal frames at each row of p."""

    def sphere(self, p: Array, r: ArrayLike, rng: np.random.Generator) -> Array:
        """One uniform point on the geodesic sphere of radius r[i] about each p[i]."""
        p = np.atleast_2d(p)
        radii = np.broadcast_to(np.asarray(r, dtype=float), (p.shape[0],))
        if np.any(radii < 0):
            raise GeometryError("sphere radius must be nonnegative")
        dirs = _unit_directions(rng, p.shape[0], self.chart_dim)
        frames = self.tangent_basis(p)
        v = np.einsum("nk,nkc->nc", dirs, frames) * radii[:, None]
        return self.exp(p, v)

    # -- Point-level API ---------------------------------------------------

    def distance(self, p: Point, q: Point) -> float:
        _check_same(p.geometry_id, q.geometry_id, "distance")
        return float(self.distances(self._coords(p), self._coords(q))[0])

    def exp_map(self, p: Point, v: TangentVector) -> Point:
        self._check_based(p, v)
        out = self.exp(self._coords(p), v.array[None, :])[0]
        return Point(tuple(float(c) for c in out), self.geometry_id)

    def parallel_transport(self, p: Point, q: Point, v: TangentVector) -> TangentVector:
        self._check_based(p, v)
        _check_same(p.geometry_id, q.geometry_id, "parallel_transport")
        out = self.transport(self._coords(p), self._coords(q), v.array[None, :])[0]
        return TangentVector(q, tuple(float(c) for c in out))

    def sample_sphere(self, p: Point, r: float, rng: np.random.Generator) -> Point:
        if r <= 0:
            raise GeometryError(f"sphere radius must be positive, got {r}")
        out = self.sphere(self._coords(p), r, rng)[0]
        return Point(tuple(float(c) for c in out), self.geometry_id)

    def _check_based(self, p: Point, v: TangentVector) -> None:
        _check_same(p.geometry_id, self.geometry_id)
        _check_same(v.base.geometry_id, p.geometry_id, "tangent vector")
        if not np.allclose(v.base.array, p.array, rtol=0.0, atol=ALGEBRAIC_TOL):
            raise GeometryError(f"tangent vector is based at {v.base.coords}, not at {p.coords}")


def _unit_directions(rng: np.random.Generator, n: int, dim: int) -> Array:
    if dim == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=n)[:, None]
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class Euclidean(GeometryBackend):
    kind = EUCLIDEAN

    def __init__(self, dim: int):
        if dim < 1:
            raise GeometryError("Euclidean dimension must be >= 1")
        self.chart_dim = dim
        self.coord_dim = dim
        self.geometry_id = f"{EUCLIDEAN}({dim})"

    def inner(self, base: Array, u: Array, v: Array) -> Array:
        return np.sum(np.atleast_2d(u) * np.atleast_2d(v), axis=1)

    def distances(self, p: Array, q: Array) -> Array:
        return np.linalg.norm(np.atleast_2d(p) - np.atleast_2d(q), axis=1)

    def exp(self, p: Array, v: Array) -> Array:
        return np.atleast_2d(p) + np.atleast_2d(v)

    def transport(self, p: Array, q: Array, v: Array) -> Array:
        return np.array(np.atleast_2d(v), dtype=float)

    def tangent_basis(self, p: Array) -> Array:
        n = np.atleast_2d(p).shape[0]
        return np.broadcast_to(np.eye(self.chart_dim), (n, self.chart_dim, self.chart_dim)).copy()


class SE2OnR2(Euclidean):
    """R^2 with the rigid-motion group SE(2) acting on it."""

    kind = SE2_ON_R2

    def __init__(self) -> None:
        super().__init__(2)
        self.geometry_id = SE2_ON_R2


def _minkowski(u: Array, v: Array) -> Array:
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    return -u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1] + u[:, 2] * v[:, 2]


class Hyperbolic2(GeometryBackend):
    """
    Hyperbolic plane as the upper sheet {<p,p> = -1, p0 > 0} of the hyperboloid
    in Minkowski space R^{2,1}. Chart: (p1, p2), volume density 1/sqrt(1+|u|^2).
    """

    kind = HYPERBOLIC2
    geometry_id = HYPERBOLIC2
    chart_dim = 2
    coord_dim = 3

    ORIGIN: Final = np.array([1.0, 0.0, 0.0])

    def validate(self, coords: Array) -> None:
        super().validate(coords)
        scale = np.maximum(1.0, coords[:, 0] ** 2)
        off = np.abs(_minkowski(coords, coords) + 1.0) / scale
        if np.any(off > GEOMETRIC_TOL) or np.any(coords[:, 0] <= 0):
            raise GeometryError("point is not on the upper hyperboloid sheet")

    def validate_tangent(self, base: Array, comps: Array) -> None:
        super().validate_tangent(base, comps)
        scale = np.maximum(1.0, np.abs(base[:, 0]) * np.linalg.norm(comps, axis=1))
        if np.any(np.abs(_minkowski(base, comps)) / scale > GEOMETRIC_TOL):
            raise GeometryError("vector is not Minkowski-orthogonal to its base point")

    def to_chart(self, coords: ArrayLike) -> Array:
        return np.atleast_2d(np.asarray(coords, dtype=float))[:, 1:]

    def from_chart(self, chart: ArrayLike) -> Array:
        u = np.atleast_2d(np.asarray(chart, dtype=float))
        p0 = np.sqrt(1.0 + np.sum(u ** 2, axis=1))
        return np.column_stack([p0, u])

    def volume_density(self, chart: ArrayLike) -> Array:
        u = np.atleast_2d(np.asarray(chart, dtype=float))
        return 1.0 / np.sqrt(1.0 + np.sum(u ** 2, axis=1))

    def chart_dilation(self, box: Box, r: float) -> Box:
        reach = float(np.max(np.linalg.norm(box.corners(), axis=1)))
        pad = r * math.cosh(math.asinh(reach) + r)
        return box.dilate(pad)

    def inner(self, base: Array, u: Array, v: Array) -> Array:
        return _minkowski(u, v)

    def distances(self, p: Array, q: Array) -> Array:
        diff = np.atleast_2d(p) - np.atleast_2d(q)
        chord = np.sqrt(np.maximum(_minkowski(diff, diff), 0.0))
        return 2.0 * np.arcsinh(chord / 2.0)

    def exp(self, p: Array, v: Array) -> Array:
        p = np.atleast_2d(p)
        v = np.atleast_2d(v)
        n = np.sqrt(np.maximum(_minkowski(v, v), 0.0))
        safe = np.where(n > 0, n, 1.0)
        ratio = np.where(n > 0, np.sinh(n) / safe, 1.0)
        out = np.cosh(n)[:, None] * p + ratio[:, None] * v
        # back onto the sheet
        out[:, 0] = np.sqrt(1.0 + np.sum(out[:, 1:] ** 2, axis=1))
        return out

    def transport(self, p: Array, q: Array, v: Array) -> Array:
        p = np.atleast_2d(p)
        q = np.atleast_2d(q)
        v = np.atleast_2d(v)
        coef = _minkowski(q, v) / (1.0 - _minkowski(p, q))
        return v + coef[:, None] * (p + q)

    def tangent_basis(self, p: Array) -> Array:
        p = np.atleast_2d(p)
        origin = np.broadcast_to(self.ORIGIN, p.shape)
        e1 = self.transport(origin, p, np.broadcast_to([0.0, 1.0, 0.0], p.shape))
        e2 = self.transport(origin, p, np.broadcast_to([0.0, 0.0, 1.0], p.shape))
        return np.stack([e1, e2], axis=1)

    def origin(self) -> Point:
        return Point((1.0, 0.0, 0.0), self.geometry_id)


def to_poincare(p: Point) -> tuple[float, float]:
    """Poincare-disk coordinates of a hyperboloid point (output only)."""
    _check_same(p.geometry_id, HYPERBOLIC2, "to_poincare")
    arr = p.array
    return (float(arr[1] / (1.0 + arr[0])), float(arr[2] / (1.0 + arr[0])))


# --- SE(2) action ------------------------------------------------------------

def _require_se2(p: Point) -> None:
    if p.geometry_id != SE2_ON_R2:
        raise GeometryMismatchError(p.geometry_id, SE2_ON_R2, "group action needs the se2-on-r2 backend")


def group_act(g: GroupElement, p: Point) -> Point:
    _require_se2(p)
    out = g.apply(p.array)[0]
    return Point((float(out[0]), float(out[1])), SE2_ON_R2)


def group_compose(g: GroupElement, h: GroupElement) -> GroupElement:
    return g.compose(h)


def group_inverse(g: GroupElement) -> GroupElement:
    return g.inverse()


def make_geometry(kind: str, dim: int = 2) -> GeometryBackend:
    if kind == EUCLIDEAN:
        return Euclidean(dim)
    if kind == HYPERBOLIC2:
        return Hyperbolic2()
    if kind == SE2_ON_R2:
        return SE2OnR2()
    raise GeometryError(f"Unknown geometry kind '{kind}'")


def backend_for(geometry_id: str) -> GeometryBackend:
    """Rebuild a backend from the id carried by points and configurations."""
    if geometry_id.startswith(f"{EUCLIDEAN}(") and geometry_id.endswith(")"):
        return Euclidean(int(geometry_id[len(EUCLIDEAN) + 1 : -1]))
    return make_geometry(geometry_id)
