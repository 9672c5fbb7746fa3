"""
centres.py
----------
Purpose: Sample the distribution of the (invisible) cluster centres on a window.

Key ideas:
- ReferenceMeasure theta = intensity x Riemannian volume on a chart box
- Poisson centres by thinning a homogeneous proposal at the declared intensity bound
- Pairwise Gibbs centres by a birth-death-move Metropolis-Hastings chain
- Lattice centres: a fixed (possibly repeated) configuration, returned verbatim

An intensity above its declared bound is a modelling error and raises
IntensityBoundError instead of being silently clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy import integrate
from scipy.stats import qmc

from .configuration import Configuration
from .geometry import ALGEBRAIC_TOL, Box, Euclidean, GeometryBackend, Region

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]
Intensity = Callable[[Array], Array]


# --- Exception ---------------------------------------------------------------

class IntensityBoundError(RuntimeError):
    """The intensity exceeded its declared upper bound during a thinning draw."""

    def __init__(self, observed: float, bound: float):
        super().__init__(f"Intensity {observed:.6g} exceeds declared bound {bound:.6g}")
        self.observed = observed
        self.bound = bound


# --- Intensity families --------------------------------------------------------

@dataclass(frozen=True)
class ConstantIntensity:
    rate: float

    def __call__(self, chart: Array) -> Array:
        return np.full(np.atleast_2d(chart).shape[0], float(self.rate))


@dataclass(frozen=True)
class LinearIntensity:
    """lambda(u) = base + slope * u[axis], clipped at 0."""
    base: float
    slope: float
    axis: int = 0

    def __call__(self, chart: Array) -> Array:
        u = np.atleast_2d(chart)
        return np.maximum(self.base + self.slope * u[:, self.axis], 0.0)


@dataclass(frozen=True)
class GaussianBumpIntensity:
    floor: float
    peak: float
    centre: tuple[float, ...]
    width: float

    def __call__(self, chart: Array) -> Array:
        u = np.atleast_2d(chart)
        r2 = np.sum((u - np.asarray(self.centre)) ** 2, axis=1)
        return self.floor + self.peak * np.exp(-0.5 * r2 / self.width ** 2)


@dataclass(frozen=True)
class StepIntensity:
    """Non-smooth intensity: `low` below `threshold` along `axis`, `high` above."""
    low: float
    high: float
    threshold: float
    axis: int = 0

    def __call__(self, chart: Array) -> Array:
        u = np.atleast_2d(chart)
        return np.where(u[:, self.axis] < self.threshold, self.low, self.high).astype(float)


# --- Reference measure -----------------------------------------------------------

@dataclass(frozen=True)
class ReferenceMeasure:
    """theta(du) = intensity(u) * volume_density(u) du on `window` (chart coordinates)."""
    window: Box
    intensity: Intensity
    intensity_upper_bound: float
    geometry: GeometryBackend

    def __post_init__(self) -> None:
        if self.intensity_upper_bound <= 0:
            raise ValueError("intensity_upper_bound must be positive")
        if self.window.dim != self.geometry.chart_dim:
            raise ValueError(
                f"window has dimension {self.window.dim}, geometry chart has {self.geometry.chart_dim}"
            )

    @property
    def geometry_id(self) -> str:
        return self.geometry.geometry_id

    def restricted_to(self, window: Box) -> "ReferenceMeasure":
        return replace(self, window=window)

    def density(self, chart: Array) -> Array:
        """Density of theta with respect to Lebesgue measure in the chart."""
        return self.intensity(chart) * self.geometry.volume_density(chart)

    def _is_flat_constant(self) -> bool:
        return isinstance(self.intensity, ConstantIntensity) and isinstance(self.geometry, Euclidean)

    @cached_property
    def total_mass(self) -> float:
        return self.mass(self.window)

    def mass(self, region: Region | None = None) -> float:
        """theta(region); regions are assumed to lie inside the window."""
        region = region or self.window
        if self._is_flat_constant():
            return float(self.intensity.rate) * region.volume  # type: ignore[attr-defined]
        if isinstance(region, Box) and region.dim <= 3:
            value, _ = integrate.nquad(
                lambda *u: float(self.density(np.asarray(u)[None, :])[0]),
                [(lo, hi) for lo, hi in zip(region.lower, region.upper)],
                opts={"limit": 100, "epsabs": 1e-10, "epsrel": 1e-8},
            )
            return float(value)
        box = region.bounding_box()
        nodes = box.lo + qmc.Sobol(d=box.dim, scramble=True, seed=0).random_base2(16) * box.widths
        inside = region.contains(nodes)
        return float(box.volume * np.mean(self.density(nodes) * inside))

    def _envelope(self) -> float:
        return self.intensity_upper_bound * self.geometry.volume_density_bound

    def _accept(self, chart: Array, rng: np.random.Generator) -> NDArray[np.bool_]:
        lam = self.intensity(chart)
        if lam.size and float(np.max(lam)) > self.intensity_upper_bound * (1.0 + ALGEBRAIC_TOL):
            raise IntensityBoundError(float(np.max(lam)), self.intensity_upper_bound)
        ratio = lam * self.geometry.volume_density(chart) / self._envelope()
        return rng.random(chart.shape[0]) < ratio

    def sample_poisson(self, rng: np.random.Generator) -> Array:
        """Poisson(theta) on the window by thinning; returns geometry coordinates."""
        n = rng.poisson(self._envelope() * self.window.volume)
        proposal = self.window.sample_uniform(rng, n)
        kept = proposal[self._accept(proposal, rng)]
        return self.geometry.from_chart(kept) if kept.size else np.zeros((0, self.geometry.coord_dim))

    def sample_points(self, rng: np.random.Generator, n: int, max_rounds: int = 10_000) -> Array:
        """n i.i.d. draws from theta / theta(window), by rejection; chart coordinates."""
        out: list[Array] = []
        have = 0
        for _ in range(max_rounds):
            if have >= n:
                break
            batch = self.window.sample_uniform(rng, max(2 * (n - have), 16))
            kept = batch[self._accept(batch, rng)]
            out.append(kept)
            have += kept.shape[0]
        else:
            raise RuntimeError("rejection sampler for theta did not converge; intensity is ~0 on the window")
        if n == 0:
            return np.zeros((0, self.window.dim))
        return np.vstack(out)[:n]


# --- Pair potentials ---------------------------------------------------------------

@dataclass(frozen=True)
class ZeroPotential:
    def __call__(self, d: Array) -> Array:
        return np.zeros_like(np.asarray(d, dtype=float))


@dataclass(frozen=True)
class HardCorePotential:
    radius: float

    def __call__(self, d: Array) -> Array:
        return np.where(np.asarray(d) < self.radius, np.inf, 0.0)


@dataclass(frozen=True)
class StraussPotential:
    """V = -log(gamma) inside `radius` (gamma in [0, 1]; gamma = 0 is a hard core)."""
    radius: float
    gamma: float

    def __call__(self, d: Array) -> Array:
        penalty = np.inf if self.gamma <= 0 else -math.log(self.gamma)
        return np.where(np.asarray(d) < self.radius, penalty, 0.0)


PairPotential = ZeroPotential | HardCorePotential | StraussPotential


def pair_potential_between(potential: PairPotential, geometry: GeometryBackend, p, q) -> float:
    """V(p, q) for two Points; symmetric because it only sees the distance."""
    return float(potential(np.array([geometry.distance(p, q)]))[0])


# --- Centre processes ----------------------------------------------------------------

@dataclass(frozen=True)
class PoissonCentres:
    reference: ReferenceMeasure


@dataclass(frozen=True)
class GibbsCentres:
    reference: ReferenceMeasure
    pair_potential: PairPotential
    inverse_temperature: float = 1.0
    mh_sweeps: int = 200

    def __post_init__(self) -> None:
        if self.mh_sweeps < 1:
            raise ValueError("mh_sweeps must be >= 1")
        if self.inverse_temperature < 0:
            raise ValueError("inverse_temperature must be >= 0")


@dataclass(frozen=True)
class LatticeCentres:
    points: Configuration


CentreProcess = PoissonCentres | GibbsCentres | LatticeCentres


def sample_centres(process: CentreProcess, rng: np.random.Generator, window: Box | None = None) -> Configuration:
    """
    Draw one centre configuration. `window` overrides the reference window
    (used for plus-sampling on a dilated window); lattice centres ignore it.
    """
    if isinstance(process, LatticeCentres):
        return process.points
    reference = process.reference if window is None else process.reference.restricted_to(window)
    if isinstance(process, PoissonCentres):
        return Configuration(reference.sample_poisson(rng), reference.geometry_id, reference.window)
    state = Configuration.empty(reference.geometry_id, reference.window, reference.geometry.coord_dim)
    chain = replace(process, reference=reference)
    for _ in range(process.mh_sweeps):
        state = gibbs_step(state, chain, rng)
    return state


def _interaction(process: GibbsCentres, u: Array, others: Array) -> float:
    if others.shape[0] == 0:
        return 0.0
    geometry = process.reference.geometry
    d = geometry.distances(np.broadcast_to(u, others.shape), others)
    return float(np.sum(process.pair_potential(d)))


def _log_ratio(beta: float, energy_new: float, energy_old: float = 0.0) -> float:
    """log of exp(-beta * (E_new - E_old)), with infinite energies handled explicitly."""
    if beta == 0.0:
        return 0.0
    if math.isinf(energy_new):
        return -math.inf
    if math.isinf(energy_old):
        return math.inf
    return -beta * (energy_new - energy_old)


def gibbs_step(state: Configuration, process: GibbsCentres, rng: np.random.Generator) -> Configuration:
    """
    One birth-death-move sweep, reversible for exp(-beta sum_{i<j} V(x_i, x_j))
    relative to Poisson(theta). A sweep is max(1, round(theta(W))) single moves.
    """
    reference = process.reference
    geometry = reference.geometry
    beta = process.inverse_temperature
    mass = reference.total_mass
    pts = np.array(state.points, dtype=float)
    steps = max(1, int(round(mass)))

    for _ in range(steps):
        n = pts.shape[0]
        kind = rng.random()
        if kind < 1.0 / 3.0:
            u = geometry.from_chart(reference.sample_points(rng, 1))[0]
            log_r = math.log(mass / (n + 1)) + _log_ratio(beta, _interaction(process, u, pts))
            if math.log(rng.random()) < log_r:
                pts = np.vstack([pts, u])
        elif n == 0:
            continue
        elif kind < 2.0 / 3.0:
            i = int(rng.integers(n))
            rest = np.delete(pts, i, axis=0)
            log_r = math.log(n / mass) - _log_ratio(beta, _interaction(process, pts[i], rest))
            if math.log(rng.random()) < log_r:
                pts = rest
        else:
            i = int(rng.integers(n))
            rest = np.delete(pts, i, axis=0)
            u = geometry.from_chart(reference.sample_points(rng, 1))[0]
            log_r = _log_ratio(beta, _interaction(process, u, rest), _interaction(process, pts[i], rest))
            if math.log(rng.random()) < log_r:
                pts[i] = u
    return state.with_points(pts)
