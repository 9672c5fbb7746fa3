"""
stats.py
--------
Purpose: Estimators and closed-form oracles for the verification runs.

Key ideas:
- Test functions f >= 0 with compact support, evaluated in chart coordinates
- EstimateWithError: (value, std_error, n) with std_error = sample std / sqrt(n)
- Empirical and theoretical Laplace functionals, moments, correlation identities
- Every check returns lhs / rhs / z so the CLI can emit it as one JSON record

Estimators are plain reductions over lists of sampled configurations; the
caller decides how the samples are produced (and on how many threads).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy import integrate
from scipy import stats as sps
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .centres import ConstantIntensity, GibbsCentres, LatticeCentres, ReferenceMeasure
from .clusters import ClusterKernel, sample_clusters
from .configuration import Configuration, MarkedConfiguration
from .geometry import Ball, Box, Euclidean, Region, backend_for

if TYPE_CHECKING:
    from .process import ClusterProcessModel

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]

DEFAULT_OUTER_NODES = 2 ** 14
_NODE_CHUNK = 1024


class EstimatorError(ValueError):
    """Estimator called outside its domain (too few samples, unsupported order, no closed form)."""


# --- Test functions --------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorTest:
    """f = scale * 1_region."""
    scale: float
    region: Region

    def __call__(self, chart: Array) -> Array:
        return self.scale * self.region.contains(chart).astype(float)

    @property
    def support(self) -> Region:
        return self.region

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0


@dataclass(frozen=True)
class SmoothBumpTest:
    """f(u) = height * (1 - |u - centre|^2 / radius^2)^3 inside the ball, 0 outside (C^2)."""
    centre: tuple[float, ...]
    radius: float
    height: float = 1.0

    def _parts(self, chart: Array) -> tuple[Array, Array, Array]:
        u = np.atleast_2d(np.asarray(chart, dtype=float))
        diff = u - np.asarray(self.centre)
        rho2 = np.sum(diff ** 2, axis=1) / self.radius ** 2
        q = np.clip(1.0 - rho2, 0.0, None)
        return diff, rho2, q

    def __call__(self, chart: Array) -> Array:
        _, _, q = self._parts(chart)
        return self.height * q ** 3

    def gradient(self, chart: Array) -> Array:
        diff, _, q = self._parts(chart)
        return (-6.0 * self.height * q ** 2 / self.radius ** 2)[:, None] * diff

    def laplacian(self, chart: Array) -> Array:
        diff, rho2, q = self._parts(chart)
        d = diff.shape[1]
        return 6.0 * self.height * q / self.radius ** 2 * (4.0 * rho2 - d * q)

    @property
    def support(self) -> Region:
        return Ball(self.centre, self.radius)

    @property
    def is_zero(self) -> bool:
        return self.height == 0.0


TestFunction = IndicatorTest | SmoothBumpTest


def _chart(config: Configuration) -> Array:
    if len(config) == 0:
        return np.zeros((0, config.window.dim))
    return backend_for(config.geometry_id).to_chart(config.points)


# --- Estimates -------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n: int

    @classmethod
    def from_values(cls, values: Sequence[float] | Array) -> "EstimateWithError":
        arr = np.asarray(values, dtype=float)
        if arr.size < 2:
            raise EstimatorError("need at least 2 samples for a standard error")
        return cls(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), int(arr.size))

    def to_record(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n": self.n}


def z_score(lhs: float, rhs: float, se_lhs: float, se_rhs: float = 0.0) -> float:
    se = math.hypot(se_lhs, se_rhs)
    diff = lhs - rhs
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def comparison_record(lhs: EstimateWithError, rhs: EstimateWithError) -> dict:
    return {
        "lhs": lhs.value,
        "rhs": rhs.value,
        "se_lhs": lhs.std_error,
        "se_rhs": rhs.std_error,
        "z": z_score(lhs.value, rhs.value, lhs.std_error, rhs.std_error),
        "n": min(lhs.n, rhs.n),
    }


# --- Functionals ---------------------------------------------------------------------

def pair_functional(f: TestFunction, config: Configuration) -> float:
    """<f, gamma> = sum_i f(x_i), duplicates counted with multiplicity."""
    if len(config) == 0:
        return 0.0
    return float(np.sum(f(_chart(config))))


def empirical_laplace(samples: Sequence[Configuration], f: TestFunction) -> EstimateWithError:
    if len(samples) < 2:
        raise EstimatorError("empirical_laplace needs at least 2 samples")
    return EstimateWithError.from_values([math.exp(-pair_functional(f, s)) for s in samples])


def poisson_laplace(reference: ReferenceMeasure, f: TestFunction) -> float:
    """Closed form exp(-int (1 - e^{-f}) d theta) over the reference window."""
    if f.is_zero:
        return 1.0
    if (
        isinstance(f, IndicatorTest)
        and isinstance(f.region, Box)
        and isinstance(reference.intensity, ConstantIntensity)
        and isinstance(reference.geometry, Euclidean)
        and reference.window.contains_box(f.region)
    ):
        return math.exp(-reference.intensity.rate * f.region.volume * (1.0 - math.exp(-f.scale)))
    box = f.support.bounding_box()
    value, _ = integrate.nquad(
        lambda *u: float(reference.density(np.asarray(u)[None, :])[0] * (1.0 - math.exp(-f(np.asarray(u)[None, :])[0]))),
        [(lo, hi) for lo, hi in zip(box.lower, box.upper)],
        opts={"limit": 200},
    )
    return math.exp(-value)


def _cluster_laplace_at(kernel: ClusterKernel, f: TestFunction, centres: Array, n_inner: int, rng) -> Array:
    """(m, n_inner) draws of exp(-sum_i f(y_i)) for y ~ eta_x, x = each centre row."""
    m = centres.shape[0]
    rep = np.repeat(centres, n_inner, axis=0)
    pts, owner = sample_clusters(kernel, rep, rng)
    if pts.shape[0]:
        vals = f(kernel.geometry.to_chart(pts))
        sums = np.bincount(owner, weights=vals, minlength=m * n_inner)
    else:
        sums = np.zeros(m * n_inner)
    return np.exp(-sums).reshape(m, n_inner)


def cluster_laplace_theoretical(
    model: "ClusterProcessModel",
    f: TestFunction,
    rng: np.random.Generator,
    n_outer: int = DEFAULT_OUTER_NODES,
    n_inner: int = 64,
) -> EstimateWithError:
    """
    Laplace functional of the cluster process through the centre law:
    Poisson centres give exp(-int (1 - G_x(f)) theta(dx)), lattice centres the
    product of G_x(f) over the lattice, with G_x(f) = E_{eta_x} exp(-sum f(y_i)).
    """
    if isinstance(model.centres, GibbsCentres):
        raise EstimatorError("no closed form for Gibbs centres; use empirical_laplace on both sides")
    if f.is_zero:
        return EstimateWithError(1.0, 0.0, n_outer)
    kernel = model.kernel

    if isinstance(model.centres, LatticeCentres):
        centres = model.centres.points.points
        if centres.shape[0] == 0:
            return EstimateWithError(1.0, 0.0, n_inner)
        draws = _cluster_laplace_at(kernel, f, centres, n_inner, rng)
        g = draws.mean(axis=1)
        if np.any(g == 0.0):
            return EstimateWithError(0.0, 0.0, n_inner)
        value = float(np.exp(np.sum(np.log(g))))
        rel_var = np.sum(draws.var(axis=1, ddof=1) / n_inner / g ** 2)
        return EstimateWithError(value, value * math.sqrt(float(rel_var)), n_inner)

    reference = model.reference.restricted_to(model.plus_window)
    box = reference.window
    sampler = qmc.LatinHypercube(d=box.dim, seed=rng)
    nodes = box.lo + sampler.random(n_outer) * box.widths
    node_values = np.empty(n_outer)
    for start in range(0, n_outer, _NODE_CHUNK):
        chunk = nodes[start : start + _NODE_CHUNK]
        g = _cluster_laplace_at(kernel, f, reference.geometry.from_chart(chunk), n_inner, rng).mean(axis=1)
        node_values[start : start + chunk.shape[0]] = reference.density(chunk) * (1.0 - g)
    integral = box.volume * float(node_values.mean())
    se_integral = box.volume * float(node_values.std(ddof=1) / math.sqrt(n_outer))
    value = math.exp(-integral)
    # first-order delta method for exp(-I)
    return EstimateWithError(value, value * se_integral, n_outer)


def marked_laplace_check(
    marked_samples: Sequence[MarkedConfiguration],
    centre_samples: Sequence[Configuration],
    kernel: ClusterKernel,
    f: TestFunction,
    rng: np.random.Generator,
    n_inner: int = 64,
) -> dict:
    """
    Laplace functional of the marked measure at F(x, y_bar) = sum_i f(y_i)
    against the centre Laplace functional at fbar(x) = -log int e^{-sum f} d eta_x
    (fbar estimated by inner Monte Carlo, independently per centre).
    """
    lhs_vals = []
    for marked in marked_samples:
        total = 0.0
        if marked.n_points:
            total = float(np.sum(f(kernel.geometry.to_chart(marked.cluster_points))))
        lhs_vals.append(math.exp(-total))
    rhs_vals = []
    for centres in centre_samples:
        if len(centres) == 0:
            rhs_vals.append(1.0)
            continue
        g = _cluster_laplace_at(kernel, f, centres.points, n_inner, rng).mean(axis=1)
        rhs_vals.append(float(np.prod(g)))
    return comparison_record(EstimateWithError.from_values(lhs_vals), EstimateWithError.from_values(rhs_vals))


# --- Moments ---------------------------------------------------------------------------

def moment_estimate(samples: Sequence[Configuration], f: TestFunction, order: int) -> EstimateWithError:
    if order not in (1, 2, 3, 4):
        raise EstimatorError(f"moment order must be in 1..4, got {order}")
    vals = np.abs([pair_functional(f, s) for s in samples]) ** order
    if vals.size and not np.any(vals):
        return EstimateWithError(0.0, 0.0, int(vals.size))
    return EstimateWithError.from_values(vals)


def moment_class_check(samples: Sequence[Configuration], f: TestFunction, max_order: int = 2) -> list[dict]:
    """Empirical moments of |<f,gamma>| up to `max_order`, with a first-half vs second-half stability z."""
    if len(samples) < 4:
        raise EstimatorError("moment_class_check needs at least 4 samples")
    half = len(samples) // 2
    out = []
    for order in range(1, max_order + 1):
        full = moment_estimate(samples, f, order)
        first = moment_estimate(samples[:half], f, order)
        second = moment_estimate(samples[half:], f, order)
        out.append(
            {
                "order": order,
                "value": full.value,
                "std_error": full.std_error,
                "finite": bool(math.isfinite(full.value)),
                "z": z_score(first.value, second.value, first.std_error, second.std_error),
            }
        )
    return out


def lyapunov_holds(samples: Sequence[Configuration], f: TestFunction, r: float, delta: float) -> bool:
    """E|X|^r <= (E|X|^{r+delta})^{r/(r+delta)} on the empirical measure (Jensen)."""
    if r <= 0 or delta <= 0:
        raise EstimatorError("lyapunov_holds needs r > 0 and delta > 0")
    x = np.abs([pair_functional(f, s) for s in samples])
    low = float(np.mean(x ** r))
    high = float(np.mean(x ** (r + delta))) ** (r / (r + delta))
    return low <= high * (1.0 + 1e-12) + 1e-300


# --- Correlation functions -------------------------------------------------------------

SymmetricFunction = Callable[..., Array]


def unit_correlation(*charts: Array) -> Array:
    """kappa == 1 (Poisson)."""
    return np.ones(np.atleast_2d(charts[0]).shape[0])


@dataclass(frozen=True)
class IndicatorProduct:
    """phi(x1, x2) = 1_{B1}(x1) 1_{B2}(x2) + 1_{B2}(x1) 1_{B1}(x2); with one region, phi = 1_B."""
    regions: tuple[Region, ...]

    @property
    def order(self) -> int:
        return len(self.regions)

    def __call__(self, *charts: Array) -> Array:
        if self.order == 1:
            return self.regions[0].contains(charts[0]).astype(float)
        a, b = self.regions
        x1, x2 = charts
        return (a.contains(x1) & b.contains(x2)).astype(float) + (b.contains(x1) & a.contains(x2)).astype(float)


def _subset_sum(phi: SymmetricFunction, chart: Array, n: int) -> float:
    if chart.shape[0] < n:
        return 0.0
    if n == 1:
        return float(np.sum(phi(chart)))
    i, j = np.triu_indices(chart.shape[0], k=1)
    return float(np.sum(phi(chart[i], chart[j])))


def correlation_identity_check(
    samples: Sequence[Configuration],
    phi: SymmetricFunction,
    n: int,
    rng: np.random.Generator,
    reference: ReferenceMeasure | None = None,
    kappa: SymmetricFunction = unit_correlation,
    n_mc: int = 100_000,
) -> dict:
    """
    E sum over n-subsets of gamma of phi  vs  (1/n!) int phi kappa d theta^n.
    Without a reference measure only the left-hand side is reported.
    """
    if n not in (1, 2):
        raise EstimatorError("correlation identities are implemented for n in {1, 2}")
    lhs_vals = [_subset_sum(phi, _chart(s), n) for s in samples]
    lhs = EstimateWithError.from_values(lhs_vals)
    if reference is None:
        return {"lhs": lhs.value, "se_lhs": lhs.std_error, "rhs": None, "se_rhs": None, "z": None, "n": lhs.n}
    mass = reference.total_mass
    draws = [reference.sample_points(rng, n_mc) for _ in range(n)]
    integrand = phi(*draws) * kappa(*draws) * mass ** n / math.factorial(n)
    rhs = EstimateWithError.from_values(integrand)
    return comparison_record(lhs, rhs)


# --- Two-sample and second-order statistics --------------------------------------------

def two_sample_ks(a: Sequence[float], b: Sequence[float], alpha: float = 0.001) -> dict:
    res = sps.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return {
        "statistic": float(res.statistic),
        "pvalue": float(res.pvalue),
        "alpha": alpha,
        "passed": bool(res.pvalue >= alpha),
        "n": min(len(a), len(b)),
    }


def pair_correlation(samples: Sequence[Configuration], r_values: Array, bandwidth: float) -> Array:
    """
    Translation edge-corrected pair-correlation estimate on a box window,
    pooled over samples, with an Epanechnikov kernel of half-width `bandwidth`.
    """
    r_values = np.asarray(r_values, dtype=float)
    if np.any(r_values <= 0) or bandwidth <= 0:
        raise EstimatorError("pair_correlation needs positive radii and bandwidth")
    numerator = np.zeros_like(r_values)
    pairs_norm = 0.0
    for s in samples:
        chart = _chart(s)
        k = chart.shape[0]
        widths = s.window.widths
        area = s.window.volume
        pairs_norm += k * (k - 1) / area ** 2
        if k < 2:
            continue
        i, j = np.triu_indices(k, k=1)
        d = pdist(chart)
        overlap = np.prod(widths - np.abs(chart[i] - chart[j]), axis=1)
        t = (r_values[:, None] - d[None, :]) / bandwidth
        kern = np.where(np.abs(t) < 1.0, 0.75 * (1.0 - t ** 2) / bandwidth, 0.0)
        # each unordered pair counts twice in the ordered-pair sum
        numerator += 2.0 * np.sum(kern / overlap[None, :], axis=1)
    if pairs_norm == 0.0:
        raise EstimatorError("pair_correlation needs samples with at least two points")
    dim = samples[0].window.dim
    surface = 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2) * r_values ** (dim - 1)
    return numerator / (surface * pairs_norm)


def min_pairwise_distance(config: Configuration) -> float | None:
    k = len(config)
    if k < 2:
        return None
    backend = backend_for(config.geometry_id)
    if isinstance(backend, Euclidean):
        return float(np.min(pdist(config.points)))
    i, j = np.triu_indices(k, k=1)
    return float(np.min(backend.distances(config.points[i], config.points[j])))


def duplicate_count(config: Configuration) -> int:
    if len(config) < 2:
        return 0
    return int(len(config) - np.unique(config.points, axis=0).shape[0])
