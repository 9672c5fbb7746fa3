"""
dynamics.py
-----------
Purpose: Overdamped Langevin motion of cluster points with the cluster law as
equilibrium; centres stay frozen.

Key ideas:
- Euler-Maruyama step y <- y + beta(x, y) dt + sqrt(2 dt) xi on a periodic box,
  drift from the Gaussian log-derivative with minimal-image offsets
- Exact Ornstein-Uhlenbeck step as a bias oracle for the Euler integrator
- Replicas are simulated together as one flat ensemble (points tagged by replica)
- Diagnostics: drift of <f, gamma_t> over time, single-point OU variance,
  time-reversal symmetry of cross moments

Stability: dt must satisfy dt <= 0.01 sigma^2, otherwise StabilityError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import structlog
from numpy.typing import NDArray

from .budget import DrawTracker
from .calculus import CylinderFunction, paired_record
from .centres import sample_centres
from .clusters import ClusterKernel, DensityUnavailableError, GaussianComponent, sample_clusters
from .configuration import MarkedConfiguration
from .geometry import Box, Euclidean
from .process import ClusterProcessModel, track_draws
from .replicas import run_replicas
from .stats import EstimateWithError, TestFunction, z_score

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]

STABILITY_FACTOR = 0.01


class StabilityError(ValueError):
    def __init__(self, time_step: float, bound: float):
        super().__init__(f"time step {time_step:.3g} exceeds the stability bound {bound:.3g} (0.01 sigma^2)")
        self.time_step = time_step
        self.bound = bound


@dataclass(frozen=True)
class DynamicsConfig:
    time_step: float
    n_steps: int
    box: Box
    stride: int = 1

    def __post_init__(self) -> None:
        if self.time_step < 0:
            raise ValueError("time_step must be >= 0")
        if self.n_steps < 0 or self.stride < 1:
            raise ValueError("n_steps must be >= 0 and stride >= 1")

    def times(self) -> Array:
        return np.arange(0, self.n_steps + 1, self.stride) * self.time_step


def _gaussian(kernel: ClusterKernel) -> GaussianComponent:
    if kernel.gaussian_sigma is None or not isinstance(kernel.geometry, Euclidean):
        raise DensityUnavailableError("Langevin dynamics need a translation-Gaussian kernel on Euclidean space")
    return kernel.parent.component  # type: ignore[return-value]


def check_stability(kernel: ClusterKernel, time_step: float) -> None:
    sigma = _gaussian(kernel).sigma
    bound = STABILITY_FACTOR * sigma ** 2
    if time_step > bound:
        raise StabilityError(time_step, bound)


def _minimal_image(d: Array, box: Box) -> Array:
    widths = box.widths
    return d - widths * np.round(d / widths)


def _wrap(y: Array, box: Box) -> Array:
    return box.lo + np.mod(y - box.lo, box.widths)


def _euler(x_rows: Array, y: Array, comp: GaussianComponent, dt: float, box: Box, rng: np.random.Generator) -> Array:
    offset = _minimal_image(y - x_rows, box)
    drift = comp.log_density_gradient(offset)
    noise = rng.standard_normal(y.shape)
    return _wrap(y + drift * dt + math.sqrt(2.0 * dt) * noise, box)


def langevin_step(
    state: MarkedConfiguration, kernel: ClusterKernel, cfg: DynamicsConfig, rng: np.random.Generator
) -> MarkedConfiguration:
    comp = _gaussian(kernel)
    check_stability(kernel, cfg.time_step)
    if cfg.time_step == 0.0 or state.n_points == 0:
        return state
    x_rows = state.centres[state.owner]
    return state.with_cluster_points(_euler(x_rows, state.cluster_points, comp, cfg.time_step, cfg.box, rng))


def ou_exact_step(
    state: MarkedConfiguration, kernel: ClusterKernel, t: float, box: Box, rng: np.random.Generator
) -> MarkedConfiguration:
    """Exact transition over time t of dy = -(y - x - m)/sigma^2 dt + sqrt(2) dW."""
    comp = _gaussian(kernel)
    if t == 0.0 or state.n_points == 0:
        return state
    x_rows = state.centres[state.owner]
    offset = _minimal_image(state.cluster_points - x_rows, box) - comp.mean_array
    decay = math.exp(-t / comp.sigma ** 2)
    spread = math.sqrt(comp.sigma ** 2 * (1.0 - decay ** 2))
    y = x_rows + comp.mean_array + offset * decay + spread * rng.standard_normal(offset.shape)
    return state.with_cluster_points(_wrap(y, box))


# --- Ensembles -----------------------------------------------------------------------------

@dataclass
class _Ensemble:
    """Flat arrays for many replicas: point i belongs to replica rep[i] and has centre x_rows[i]."""
    x_rows: Array
    y: Array
    rep: NDArray[np.intp]
    n_replicas: int

    def per_replica(self, f: TestFunction) -> Array:
        if self.y.shape[0] == 0:
            return np.zeros(self.n_replicas)
        return np.bincount(self.rep, weights=f(self.y), minlength=self.n_replicas)

    def split(self) -> list[Array]:
        order = np.argsort(self.rep, kind="stable")
        counts = np.bincount(self.rep, minlength=self.n_replicas)
        return np.split(self.y[order], np.cumsum(counts)[:-1])


def equilibrium_state(
    model: ClusterProcessModel, box: Box, rng: np.random.Generator, tracker: DrawTracker | None = None
) -> MarkedConfiguration:
    """Centres from the model's centre law on the box, clusters wrapped into it."""
    centres = sample_centres(model.centres, rng, window=box)
    pts, owner = sample_clusters(model.kernel, centres.points, rng)
    track_draws(tracker, len(centres) + pts.shape[0], "dynamics initial state")
    if pts.shape[0]:
        pts = _wrap(pts, box)
    return MarkedConfiguration(centres.points, pts, owner, model.geometry.geometry_id, box)


def _ensemble(states: list[MarkedConfiguration], dim: int) -> _Ensemble:
    xs = [s.centres[s.owner] for s in states]
    ys = [s.cluster_points for s in states]
    reps = [np.full(s.n_points, i, dtype=np.intp) for i, s in enumerate(states)]
    if not states:
        return _Ensemble(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0, dtype=np.intp), 0)
    return _Ensemble(np.vstack(xs), np.vstack(ys), np.concatenate(reps), len(states))


def _run(ens: _Ensemble, comp: GaussianComponent, cfg: DynamicsConfig, steps: int, rng: np.random.Generator) -> None:
    if cfg.time_step == 0.0 or ens.y.shape[0] == 0:
        return
    for _ in range(steps):
        ens.y = _euler(ens.x_rows, ens.y, comp, cfg.time_step, cfg.box, rng)


def _initial_ensemble(
    model: ClusterProcessModel, cfg: DynamicsConfig, rng: np.random.Generator, n_replicas: int, threads: int,
    tracker: DrawTracker | None,
) -> _Ensemble:
    states = run_replicas(
        lambda r: equilibrium_state(model, cfg.box, r, tracker), rng, n_replicas, threads, "dynamics_initial"
    )
    return _ensemble(states, model.geometry.coord_dim)


def _slope_and_series(times: Array, values: Array) -> tuple[Array, Array, Array]:
    """values: (n_times, n_replicas). Per-replica least-squares slopes plus per-time mean / se."""
    n_rep = values.shape[1]
    centred = times - times.mean()
    denom = float(np.sum(centred ** 2))
    slopes = centred @ (values - values.mean(axis=0)) / denom if denom > 0 else np.zeros(n_rep)
    means = values.mean(axis=1)
    ses = values.std(axis=1, ddof=1) / math.sqrt(n_rep) if n_rep >= 2 else np.zeros(times.size)
    return slopes, means, ses


def stationarity_test(
    model: ClusterProcessModel,
    cfg: DynamicsConfig,
    f: TestFunction,
    rng: np.random.Generator,
    n_replicas: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """Equilibrium start; mean of <f, gamma_t> at thinned times and the z-score of its drift slope."""
    comp = _gaussian(model.kernel)
    check_stability(model.kernel, cfg.time_step)
    rng_init, rng_run = rng.spawn(2)
    ens = _initial_ensemble(model, cfg, rng_init, n_replicas, threads, tracker)
    times = cfg.times()
    values = np.empty((times.size, n_replicas))
    values[0] = ens.per_replica(f)
    for i in range(1, times.size):
        _run(ens, comp, cfg, cfg.stride, rng_run)
        values[i] = ens.per_replica(f)
    slopes, means, ses = _slope_and_series(times, values)
    if n_replicas >= 2 and times.size >= 2:
        slope = EstimateWithError.from_values(slopes)
    else:
        slope = EstimateWithError(float(np.mean(slopes)) if slopes.size else 0.0, 0.0, int(slopes.size))
    return {
        "times": times.tolist(),
        "mean": means.tolist(),
        "se": ses.tolist(),
        "drift_slope": slope.value,
        "se_slope": slope.std_error,
        "z": z_score(slope.value, 0.0, slope.std_error),
        "n": n_replicas,
    }


def ou_relaxation(
    kernel: ClusterKernel, x: Array, y0: Array, cfg: DynamicsConfig, rng: np.random.Generator, n_replicas: int
) -> dict:
    """Single-point clusters started at y0: empirical mean path against x + m + (y0 - x - m) e^{-t/sigma^2}."""
    comp = _gaussian(kernel)
    check_stability(kernel, cfg.time_step)
    x = np.asarray(x, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    ens = _Ensemble(
        np.tile(x, (n_replicas, 1)), np.tile(y0, (n_replicas, 1)), np.arange(n_replicas, dtype=np.intp), n_replicas
    )
    times = cfg.times()
    means = [ens.y.mean(axis=0)]
    for _ in range(1, times.size):
        _run(ens, comp, cfg, cfg.stride, rng)
        means.append(ens.y.mean(axis=0))
    target = x + comp.mean_array
    exact = target + np.outer(np.exp(-times / comp.sigma ** 2), y0 - target)
    return {"times": times, "mean": np.asarray(means), "exact": exact}


def ou_variance_check(
    kernel: ClusterKernel,
    cfg: DynamicsConfig,
    rng: np.random.Generator,
    n_replicas: int,
    method: str = "euler",
    tracker: DrawTracker | None = None,
) -> dict:
    """
    One centre, one point per cluster, equilibrium start: stationary variance of y - x - m
    after cfg.n_steps steps, against sigma^2. The Euler chain's own stationary
    variance is sigma^2 / (1 - dt / (2 sigma^2)).
    """
    comp = _gaussian(kernel)
    check_stability(kernel, cfg.time_step)
    sigma2 = comp.sigma ** 2
    dim = comp.dim
    offset = comp.sigma * rng.standard_normal((n_replicas, dim))
    track_draws(tracker, n_replicas, "ou offsets")
    dt = cfg.time_step
    if method == "exact":
        decay = math.exp(-cfg.n_steps * dt / sigma2)
        offset = offset * decay + math.sqrt(sigma2 * (1.0 - decay ** 2)) * rng.standard_normal(offset.shape)
    elif method == "euler":
        for _ in range(cfg.n_steps):
            offset = offset - offset / sigma2 * dt + math.sqrt(2.0 * dt) * rng.standard_normal(offset.shape)
    else:
        raise ValueError(f"unknown OU method '{method}'")
    est = EstimateWithError.from_values((offset ** 2).ravel())
    return {
        "lhs": est.value,
        "rhs": sigma2,
        "se_lhs": est.std_error,
        "se_rhs": 0.0,
        "z": z_score(est.value, sigma2, est.std_error),
        "euler_stationary": sigma2 / (1.0 - dt / (2.0 * sigma2)) if dt else sigma2,
        "relative_bias_bound": dt / sigma2,
        "method": method,
        "n": est.n,
    }


def reversibility_check(
    model: ClusterProcessModel,
    cfg: DynamicsConfig,
    F1: CylinderFunction,
    F2: CylinderFunction,
    rng: np.random.Generator,
    n_replicas: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> dict:
    """E[F1(gamma_0) F2(gamma_t)] against E[F2(gamma_0) F1(gamma_t)] with t = n_steps * dt."""
    comp = _gaussian(model.kernel)
    check_stability(model.kernel, cfg.time_step)
    rng_init, rng_run = rng.spawn(2)
    ens = _initial_ensemble(model, cfg, rng_init, n_replicas, threads, tracker)
    start = ens.split()
    _run(ens, comp, cfg, cfg.n_steps, rng_run)
    end = ens.split()
    forward = [F1(a) * F2(b) for a, b in zip(start, end)]
    backward = [F2(a) * F1(b) for a, b in zip(start, end)]
    return paired_record(forward, backward)
