"""
calculus.py
-----------
Purpose: Differential calculus on configurations and the Monte Carlo checks built on it.

Key ideas:
- CylinderFunction F(gamma) = g(<phi_1, gamma>, ..., <phi_k, gamma>) with smooth bumps phi_j
- BumpField v(x) = b(|x - c| / R) u and the bump flow x -> x + s v(x) (a compactly
  supported diffeomorphism when |s| sup|grad b| < 1; inverse by Newton)
- Radon-Nikodym density of the shifted cluster law, per point and per marked configuration
- Logarithmic derivatives beta^v along lifted fields, by the direct Gaussian formula or
  through the parent law (push-forward route)
- qi_test / ibp_test / ibp_test_general / dirichlet_form_check: paired per-replica
  differences, z-score of their mean

Everything here lives on Euclidean space with translation-Gaussian kernels;
other kernels raise DensityUnavailableError / RouteUnavailableError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy import integrate

from .clusters import ClusterKernel, DensityUnavailableError, log_density_batch
from .configuration import ClusterVector, Configuration, MarkedConfiguration
from .geometry import Ball, Point, Region
from .budget import DrawTracker
from .process import ClusterProcessModel, sample_marked
from .replicas import run_replicas
from .stats import SmoothBumpTest, z_score

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]

# sup over rho of |d/drho (1 - rho^2)^3|, attained at rho = 1/sqrt(5)
BUMP_SLOPE_MAX = 6.0 * 16.0 / (25.0 * math.sqrt(5.0))
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
FD_STEP = 1e-5


class RouteUnavailableError(RuntimeError):
    """No way to compute the requested logarithmic derivative for this kernel."""

    def __init__(self, detail: str):
        super().__init__(f"No logarithmic-derivative route: {detail}")
        self.detail = detail


# --- Outer functions -------------------------------------------------------------

@dataclass(frozen=True)
class LinearOuter:
    """g(s) = offset + w . s (w = 0 gives a constant)."""
    weights: tuple[float, ...]
    offset: float = 0.0

    def value(self, s: Array) -> float:
        return self.offset + float(np.dot(self.weights, s))

    def gradient(self, s: Array) -> Array:
        return np.asarray(self.weights, dtype=float)

    def hessian(self, s: Array) -> Array:
        k = len(self.weights)
        return np.zeros((k, k))


@dataclass(frozen=True)
class ExpNegOuter:
    """g(s) = exp(-w . s)."""
    weights: tuple[float, ...]

    def value(self, s: Array) -> float:
        return math.exp(-float(np.dot(self.weights, s)))

    def gradient(self, s: Array) -> Array:
        return -np.asarray(self.weights) * self.value(s)

    def hessian(self, s: Array) -> Array:
        w = np.asarray(self.weights, dtype=float)
        return np.outer(w, w) * self.value(s)


@dataclass(frozen=True)
class TanhOuter:
    """g(s) = tanh(w . s)."""
    weights: tuple[float, ...]

    def value(self, s: Array) -> float:
        return math.tanh(float(np.dot(self.weights, s)))

    def gradient(self, s: Array) -> Array:
        t = self.value(s)
        return (1.0 - t * t) * np.asarray(self.weights, dtype=float)

    def hessian(self, s: Array) -> Array:
        w = np.asarray(self.weights, dtype=float)
        t = self.value(s)
        return -2.0 * t * (1.0 - t * t) * np.outer(w, w)


OuterFunction = LinearOuter | ExpNegOuter | TanhOuter


# --- Cylinder functions --------------------------------------------------------------

@dataclass(frozen=True)
class CylinderFunction:
    outer: OuterFunction
    inner: tuple[SmoothBumpTest, ...]

    def __post_init__(self) -> None:
        if not all(isinstance(phi, SmoothBumpTest) for phi in self.inner):
            raise ValueError("cylinder functions need smooth inner test functions")
        if len(self.outer.weights) != len(self.inner):
            raise ValueError(f"outer takes {len(self.outer.weights)} arguments, {len(self.inner)} inner functions given")

    @classmethod
    def constant(cls, c: float, inner: SmoothBumpTest) -> "CylinderFunction":
        return cls(LinearOuter((0.0,), c), (inner,))

    @property
    def k(self) -> int:
        return len(self.inner)

    def sums(self, points: Array) -> Array:
        if points.shape[0] == 0:
            return np.zeros(self.k)
        return np.array([float(np.sum(phi(points))) for phi in self.inner])

    def __call__(self, points: Array) -> float:
        return self.outer.value(self.sums(points))

    def point_gradients(self, points: Array) -> Array:
        """grad_y F for every point y (rows)."""
        if points.shape[0] == 0:
            return np.zeros_like(points)
        dg = self.outer.gradient(self.sums(points))
        return sum(dg[j] * phi.gradient(points) for j, phi in enumerate(self.inner))

    def laplacian(self, points: Array) -> float:
        """Delta^Gamma F = sum_y [sum_j g_j Delta phi_j(y) + sum_jl g_jl grad phi_j(y) . grad phi_l(y)]."""
        if points.shape[0] == 0:
            return 0.0
        s = self.sums(points)
        dg = self.outer.gradient(s)
        d2g = self.outer.hessian(s)
        grads = [phi.gradient(points) for phi in self.inner]
        first = sum(dg[j] * float(np.sum(phi.laplacian(points))) for j, phi in enumerate(self.inner))
        second = sum(
            d2g[j, m] * float(np.sum(grads[j] * grads[m])) for j in range(self.k) for m in range(self.k)
        )
        return float(first + second)


# --- Vector fields and diffeomorphisms ---------------------------------------------------

@dataclass(frozen=True)
class BumpField:
    """v(x) = b(|x - c| / R) u with b(rho) = (1 - rho^2)^3 on rho < 1."""
    centre: tuple[float, ...]
    radius: float
    direction: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        if len(self.centre) != len(self.direction):
            raise ValueError("bump centre and direction have different dimensions")

    @property
    def u(self) -> Array:
        return np.asarray(self.direction, dtype=float)

    @property
    def support(self) -> Region:
        return Ball(self.centre, self.radius)

    def _q(self, x: Array) -> tuple[Array, Array]:
        diff = np.atleast_2d(x) - np.asarray(self.centre)
        q = np.clip(1.0 - np.sum(diff ** 2, axis=1) / self.radius ** 2, 0.0, None)
        return diff, q

    def bump(self, x: Array) -> Array:
        _, q = self._q(x)
        return q ** 3

    def bump_gradient(self, x: Array) -> Array:
        diff, q = self._q(x)
        return (-6.0 * q ** 2 / self.radius ** 2)[:, None] * diff

    def __call__(self, x: Array) -> Array:
        return self.bump(x)[:, None] * self.u

    def divergence(self, x: Array) -> Array:
        return self.bump_gradient(x) @ self.u

    def sup_gradient(self) -> float:
        return BUMP_SLOPE_MAX / self.radius * float(np.linalg.norm(self.u))


class Diffeomorphism(Protocol):
    def forward(self, x: Array) -> Array: ...

    def inverse(self, y: Array) -> Array: ...

    def jacobian_det(self, x: Array) -> Array: ...

    def moves(self, x: Array) -> NDArray[np.bool_]: ...


@dataclass(frozen=True)
class IdentityDiffeomorphism:
    def forward(self, x: Array) -> Array:
        return np.array(x, dtype=float)

    def inverse(self, y: Array) -> Array:
        return np.array(y, dtype=float)

    def jacobian_det(self, x: Array) -> Array:
        return np.ones(np.atleast_2d(x).shape[0])

    def moves(self, x: Array) -> NDArray[np.bool_]:
        return np.zeros(np.atleast_2d(x).shape[0], dtype=bool)


@dataclass(frozen=True)
class BumpFlow:
    """x -> x + s b(x) u; identity outside the bump's ball."""
    field: BumpField
    step: float

    def __post_init__(self) -> None:
        if abs(self.step) * self.field.sup_gradient() >= 1.0:
            raise ValueError(
                f"|s| * sup|grad b| = {abs(self.step) * self.field.sup_gradient():.4g} >= 1; map is not invertible"
            )

    def moves(self, x: Array) -> NDArray[np.bool_]:
        _, q = self.field._q(x)
        return q > 0.0

    def forward(self, x: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x + self.step * self.field(x)

    def jacobian_det(self, x: Array) -> Array:
        # I + s u grad(b)^T has determinant 1 + s grad(b) . u
        return 1.0 + self.step * self.field.divergence(x)

    def inverse(self, y: Array) -> Array:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = y.copy()
        active = self.moves(y)
        if not np.any(active):
            return out
        target = y[active]
        x = target.copy()
        u = self.field.u
        s = self.step
        for _ in range(NEWTON_MAX_ITER):
            r = x + s * self.field(x) - target
            g = self.field.bump_gradient(x)
            # Sherman-Morrison for (I + s u g^T)^{-1} r
            delta = r - s * u[None, :] * ((g * r).sum(axis=1) / (1.0 + s * (g @ u)))[:, None]
            x = x - delta
            if float(np.max(np.abs(delta))) < NEWTON_TOL:
                break
        else:
            log.warning("bump_flow_newton_not_converged", max_step=float(np.max(np.abs(delta))))
        out[active] = x
        return out


@dataclass(frozen=True)
class ComposedDiffeomorphism:
    """outer o inner."""
    outer: Diffeomorphism
    inner: Diffeomorphism

    def forward(self, x: Array) -> Array:
        return self.outer.forward(self.inner.forward(x))

    def inverse(self, y: Array) -> Array:
        return self.inner.inverse(self.outer.inverse(y))

    def jacobian_det(self, x: Array) -> Array:
        return self.outer.jacobian_det(self.inner.forward(x)) * self.inner.jacobian_det(x)

    def moves(self, x: Array) -> NDArray[np.bool_]:
        return self.inner.moves(x) | self.outer.moves(self.inner.forward(x))


def compose_diffeomorphisms(outer: Diffeomorphism, inner: Diffeomorphism) -> ComposedDiffeomorphism:
    return ComposedDiffeomorphism(outer, inner)


def transform_marked(marked: MarkedConfiguration, phi: Diffeomorphism, inverse: bool = False) -> MarkedConfiguration:
    """Diagonal lift: move every cluster point, keep the centres."""
    if marked.n_points == 0:
        return marked
    moved = phi.inverse(marked.cluster_points) if inverse else phi.forward(marked.cluster_points)
    return marked.with_cluster_points(moved)


# --- Gamma-gradient ----------------------------------------------------------------------

def _points(gamma: Configuration | Array) -> Array:
    return gamma.points if isinstance(gamma, Configuration) else np.atleast_2d(np.asarray(gamma, dtype=float))


def gamma_gradient(F: CylinderFunction, gamma: Configuration | Array, v: BumpField) -> float:
    """sum_x grad_x F(gamma) . v(x)."""
    pts = _points(gamma)
    if pts.shape[0] == 0:
        return 0.0
    return float(np.sum(F.point_gradients(pts) * v(pts)))


def gamma_gradient_fd(F: CylinderFunction, gamma: Configuration | Array, v: BumpField, step: float = FD_STEP) -> float:
    """Central difference of t -> F(gamma + t v(gamma)) at t = 0."""
    pts = _points(gamma)
    if pts.shape[0] == 0:
        return 0.0
    shift = v(pts)
    return (F(pts + step * shift) - F(pts - step * shift)) / (2.0 * step)


# --- Radon-Nikodym densities ---------------------------------------------------------------

def _log_rho_points(kernel: ClusterKernel, phi: Diffeomorphism, x_rows: Array, y: Array) -> Array:
    """Per-point log[h(phi^-1 y) / (h(y) J_phi(phi^-1 y))]; exactly 0 where phi does not move y."""
    out = np.zeros(y.shape[0])
    active = phi.moves(y)
    if not np.any(active):
        return out
    ya, xa = y[active], x_rows[active]
    pre = phi.inverse(ya)
    out[active] = log_density_batch(kernel, xa, pre) - log_density_batch(kernel, xa, ya) - np.log(phi.jacobian_det(pre))
    return out


def rho_eta(kernel: ClusterKernel, phi: Diffeomorphism, x: Point, y_bar: ClusterVector) -> float:
    if kernel.gaussian_sigma is None:
        raise DensityUnavailableError(f"{kernel.placement.variant} kernel")
    if len(y_bar) == 0:
        return 1.0
    x_rows = np.broadcast_to(x.array, y_bar.components.shape)
    return float(math.exp(np.sum(_log_rho_points(kernel, phi, x_rows, y_bar.components))))


def rn_density(kernel: ClusterKernel, phi: Diffeomorphism, marked: MarkedConfiguration, localize: bool = False) -> float:
    """Product over (centre, cluster) pairs of rho_eta; `localize` keeps only clusters meeting phi's support."""
    if kernel.gaussian_sigma is None:
        raise DensityUnavailableError(f"{kernel.placement.variant} kernel")
    if marked.n_points == 0:
        return 1.0
    if localize:
        meets = np.zeros(marked.n_centres, dtype=bool)
        meets[marked.owner[phi.moves(marked.cluster_points)]] = True
        marked = marked.restrict(meets)
        if marked.n_points == 0:
            return 1.0
    x_rows = marked.centres[marked.owner]
    return float(math.exp(np.sum(_log_rho_points(kernel, phi, x_rows, marked.cluster_points))))


# --- Logarithmic derivatives -------------------------------------------------------------------

def _beta_direct(kernel: ClusterKernel, x_rows: Array, y: Array) -> Array:
    if kernel.gaussian_sigma is None:
        raise RouteUnavailableError("direct route needs a translation-Gaussian kernel")
    comp = kernel.parent.component
    return comp.log_density_gradient(y - x_rows)  # type: ignore[union-attr]


def _beta_pushforward(kernel: ClusterKernel, x_rows: Array, y: Array) -> Array:
    comp = kernel.parent.component
    pullback = getattr(kernel.placement, "pullback", None)
    grad = getattr(comp, "log_density_gradient", None)
    if pullback is None or grad is None:
        raise RouteUnavailableError("push-forward route needs a component log-density gradient and an isometric placement")
    try:
        w = pullback(x_rows, y)
    except DensityUnavailableError as exc:
        raise RouteUnavailableError(str(exc)) from exc
    # the differential of an isometric placement is the identity in these coordinates
    return grad(w)


def beta_points(kernel: ClusterKernel, x_rows: Array, y: Array, route: str = "auto") -> Array:
    """Vector logarithmic derivative of eta_x at each cluster point."""
    if route == "direct":
        return _beta_direct(kernel, x_rows, y)
    if route == "pushforward":
        return _beta_pushforward(kernel, x_rows, y)
    try:
        return _beta_direct(kernel, x_rows, y)
    except RouteUnavailableError:
        return _beta_pushforward(kernel, x_rows, y)


def _beta_v_sum(kernel: ClusterKernel, x_rows: Array, y: Array, v: BumpField, route: str = "auto") -> float:
    if y.shape[0] == 0:
        return 0.0
    active = v.bump(y) > 0.0
    if not np.any(active):
        return 0.0
    ya, xa = y[active], x_rows[active]
    beta = beta_points(kernel, xa, ya, route)
    return float(np.sum(beta * v(ya)) + np.sum(v.divergence(ya)))


def beta_eta_v(kernel: ClusterKernel, x: Point, y_bar: ClusterVector, v: BumpField, route: str = "auto") -> float:
    """sum_i beta_i . v(y_i) + sum_i div v(y_i)."""
    if len(y_bar) == 0:
        return 0.0
    x_rows = np.broadcast_to(x.array, y_bar.components.shape)
    return _beta_v_sum(kernel, x_rows, y_bar.components, v, route)


def marked_beta_v(kernel: ClusterKernel, marked: MarkedConfiguration, v: BumpField, route: str = "auto") -> float:
    """B^v(gamma_hat) = sum over pairs of beta_eta^v."""
    if marked.n_points == 0:
        return 0.0
    return _beta_v_sum(kernel, marked.centres[marked.owner], marked.cluster_points, v, route)


def single_cluster_ibp_residual(kernel: ClusterKernel, x: float, g: SmoothBumpTest, v: BumpField) -> float:
    """
    int (g' v + g (beta v + v')) d eta_x for a one-point cluster on R, by adaptive quadrature.
    Vanishes when the IBP formula holds.
    """
    sigma = kernel.gaussian_sigma
    if sigma is None or kernel.parent.component.width != 1:  # type: ignore[union-attr]
        raise DensityUnavailableError("the 1-d quadrature oracle needs a 1-d translation-Gaussian kernel")

    def integrand(t: float) -> float:
        y = np.array([[t]])
        xr = np.array([[x]])
        beta = float(_beta_direct(kernel, xr, y)[0, 0])
        density = math.exp(float(log_density_batch(kernel, xr, y)[0]))
        term = float(g.gradient(y)[0, 0] * v(y)[0, 0] + g(y)[0] * (beta * v(y)[0, 0] + v.divergence(y)[0]))
        return term * density

    lo = min(g.centre[0] - g.radius, v.centre[0] - v.radius)
    hi = max(g.centre[0] + g.radius, v.centre[0] + v.radius)
    value, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(value)


# --- Monte Carlo identities ----------------------------------------------------------------------

def _require_density(model: ClusterProcessModel) -> None:
    if model.kernel.gaussian_sigma is None:
        raise DensityUnavailableError(
            f"{model.kernel.placement.variant} kernel with {type(model.kernel.parent.component).__name__} components"
        )


def paired_record(lhs: Sequence[float], rhs: Sequence[float]) -> dict:
    """Means of both sides plus the z-score of the mean paired difference."""
    a = np.asarray(lhs, dtype=float)
    b = np.asarray(rhs, dtype=float)
    d = a - b
    n = d.size
    se = float(d.std(ddof=1) / math.sqrt(n)) if n >= 2 else 0.0
    return {
        "lhs": float(a.mean()),
        "rhs": float(b.mean()),
        "se": se,
        "z": z_score(float(d.mean()), 0.0, se),
        "n": int(n),
    }


def qi_test(
    model: ClusterProcessModel,
    phi: Diffeomorphism,
    F: CylinderFunction,
    rng: np.random.Generator,
    n: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """
    E F(phi(gamma)) against E F(gamma) R(gamma_hat).

    gamma is every cluster point of gamma_hat, not only those inside the window:
    phi can carry a point from outside the window into it, so F sees the uncropped
    configuration on both sides.
    """
    _require_density(model)

    def one(r: np.random.Generator) -> tuple[float, float]:
        marked = sample_marked(model, r, tracker)
        pts = marked.cluster_points
        lhs = F(phi.forward(pts)) if pts.shape[0] else F(pts)
        return lhs, F(pts) * rn_density(model.kernel, phi, marked)

    rows = run_replicas(one, rng, n, threads, "qi_test")
    return paired_record([a for a, _ in rows], [b for _, b in rows])


def ibp_test(
    model: ClusterProcessModel,
    F: CylinderFunction,
    v: BumpField,
    rng: np.random.Generator,
    n: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """E grad^v F  against  -E F B^v, differentiating in cluster directions only."""
    _require_density(model)

    def one(r: np.random.Generator) -> tuple[float, float]:
        marked = sample_marked(model, r, tracker)
        pts = marked.cluster_points
        return gamma_gradient(F, pts, v), -F(pts) * marked_beta_v(model.kernel, marked, v)

    rows = run_replicas(one, rng, n, threads, "ibp_test")
    return paired_record([a for a, _ in rows], [b for _, b in rows])


def ibp_test_general(
    model: ClusterProcessModel,
    F1: CylinderFunction,
    F2: CylinderFunction,
    field: Sequence[tuple[CylinderFunction, BumpField]],
    rng: np.random.Generator,
    n: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """
    Product-rule IBP for V = sum_j G_j v_j:
    E[F2 grad^V F1] = -E[F1 grad^V F2] - E[F1 F2 sum_j (G_j B^{v_j} + grad^{v_j} G_j)].
    """
    _require_density(model)
    if not field:
        raise ValueError("ibp_test_general needs at least one (G, v) term")

    def one(r: np.random.Generator) -> tuple[float, float]:
        marked = sample_marked(model, r, tracker)
        pts = marked.cluster_points
        f1, f2 = F1(pts), F2(pts)
        t1 = t2 = t3 = 0.0
        for G, v in field:
            g = G(pts)
            t1 += f2 * g * gamma_gradient(F1, pts, v)
            t2 += f1 * g * gamma_gradient(F2, pts, v)
            t3 += f1 * f2 * (g * marked_beta_v(model.kernel, marked, v) + gamma_gradient(G, pts, v))
        return t1, -(t2 + t3)

    rows = run_replicas(one, rng, n, threads, "ibp_test_general")
    return paired_record([a for a, _ in rows], [b for _, b in rows])


def dirichlet_form_check(
    model: ClusterProcessModel,
    F1: CylinderFunction,
    F2: CylinderFunction,
    rng: np.random.Generator,
    n: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """
    E sum_y grad F1 . grad F2  against  E F1 (-Delta F2 - sum_y beta(y) . grad F2(y)),
    the energy of the cluster-direction form and its generator.
    """
    _require_density(model)

    def one(r: np.random.Generator) -> tuple[float, float]:
        marked = sample_marked(model, r, tracker)
        pts = marked.cluster_points
        if pts.shape[0] == 0:
            return 0.0, 0.0
        g1 = F1.point_gradients(pts)
        g2 = F2.point_gradients(pts)
        beta = beta_points(model.kernel, marked.centres[marked.owner], pts, "direct")
        generator = -F2.laplacian(pts) - float(np.sum(beta * g2))
        return float(np.sum(g1 * g2)), F1(pts) * generator

    rows = run_replicas(one, rng, n, threads, "dirichlet_form_check")
    return paired_record([a for a, _ in rows], [b for _, b in rows])


def check_inverse(phi: Diffeomorphism, points: Array) -> float:
    """max |phi(phi^-1(y)) - y| over the given points."""
    back = phi.forward(phi.inverse(points))
    return float(np.max(np.abs(back - points))) if points.size else 0.0

