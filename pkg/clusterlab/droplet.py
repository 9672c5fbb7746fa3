"""
droplet.py
----------
Purpose: Droplets D_B(w) = {x : phi_x(w) in B}, droplet clusters (unions over a
cluster's components) and their theta-measures, by Monte Carlo on the window.

Key ideas:
- Membership is decided by placing w at x, so every placement variant is
  handled the same way (radial-angular membership is random: it draws angles)
- theta(droplet) = theta(W) * P(x in droplet) for x ~ theta / theta(W), binomial SE
- sigma_bar_check compares the direct estimate of sigma_bar(X_B) with the
  integral of droplet-cluster measures over Q; condition_probe reports the
  empirical sup of theta(D_B(w)) (a lower bound) and the mean cluster size
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import structlog
from numpy.typing import NDArray

from .budget import DrawTracker
from .centres import ReferenceMeasure
from .clusters import (
    GeodesicTransportPlacement,
    GroupActionPlacement,
    PlacementMap,
    RadialAngularPlacement,
    TranslationPlacement,
    sample_parent_batch,
)
from .configuration import ClusterVector
from .geometry import Ball, Box, Point, Region
from .process import ClusterProcessModel, track_draws
from .stats import EstimateWithError, comparison_record

log = structlog.get_logger(__name__)

Array = NDArray[np.float64]

MIN_MC = 1_000


@dataclass(frozen=True)
class DropletQuery:
    placement: PlacementMap
    shape: Region
    reference: ReferenceMeasure

    def __post_init__(self) -> None:
        if isinstance(self.shape, Ball) and not math.isfinite(self.shape.radius):
            raise ValueError("droplet shape must be bounded")


def _hits(query: DropletQuery, x_rows: Array, w: Array, rng: np.random.Generator | None) -> NDArray[np.bool_]:
    y = query.placement.place(x_rows, w, rng)
    return query.shape.contains(query.reference.geometry.to_chart(y))


def droplet_contains(query: DropletQuery, w: Array, x: Point, rng: np.random.Generator | None = None) -> bool:
    """phi_x(w) in B."""
    w_row = np.atleast_2d(np.asarray(w, dtype=float))
    return bool(_hits(query, x.array[None, :], w_row, rng)[0])


def droplet_bounding_box(query: DropletQuery, w: Array) -> Box:
    """A chart box containing D_B(w)."""
    w = np.asarray(w, dtype=float).ravel()
    box = query.shape.bounding_box()
    geometry = query.reference.geometry
    placement = query.placement
    if isinstance(placement, TranslationPlacement):
        return Box.of(box.lo - w, box.hi - w)
    if isinstance(placement, GroupActionPlacement):
        # x = A^{-1}(y - xi) + xi for y in B
        angle, xi = w[0], w[1:]
        c, s = math.cos(-angle), math.sin(-angle)
        rot = np.array([[c, -s], [s, c]])
        if isinstance(query.shape, Ball):
            centre = rot @ (np.asarray(query.shape.centre) - xi) + xi
            return Ball(tuple(centre), query.shape.radius).bounding_box()
        corners = (box.corners() - xi) @ rot.T + xi
        return Box.of(corners.min(axis=0), corners.max(axis=0))
    if isinstance(placement, GeodesicTransportPlacement):
        base = np.broadcast_to(np.asarray(placement.base, dtype=float), (1, w.size))
        reach = float(geometry.norm(base, w[None, :])[0])
    elif isinstance(placement, RadialAngularPlacement):
        reach = abs(float(w[0]))
    else:
        raise ValueError(f"unknown placement variant {placement.variant}")
    return geometry.chart_dilation(box, reach)


def droplet_cluster_measure(
    query: DropletQuery, w_bar: ClusterVector, rng: np.random.Generator, n_mc: int = 10_000
) -> EstimateWithError:
    """theta of the union of D_B(w_i) over the components of w_bar, within the window."""
    if n_mc < MIN_MC:
        raise ValueError(f"n_mc must be >= {MIN_MC}")
    k = len(w_bar)
    if k == 0:
        return EstimateWithError(0.0, 0.0, n_mc)
    window = query.reference.window
    for row in w_bar.components:
        if not window.contains_box(droplet_bounding_box(query, row)):
            log.warning("droplet_truncated", component=row.tolist(), window=[window.lower, window.upper])
    mass = query.reference.total_mass
    x = query.reference.geometry.from_chart(query.reference.sample_points(rng, n_mc))
    x_rep = np.repeat(x, k, axis=0)
    w_rep = np.tile(w_bar.components, (n_mc, 1))
    union = _hits(query, x_rep, w_rep, rng).reshape(n_mc, k).any(axis=1)
    p = float(union.mean())
    return EstimateWithError(mass * p, mass * math.sqrt(p * (1.0 - p) / n_mc), n_mc)


def sigma_bar_check(
    model: ClusterProcessModel,
    shape: Region,
    rng: np.random.Generator,
    n_mc: int = 10_000,
    n_outer: int = 200,
    n_inner: int = 2_000,
    tracker: DrawTracker | None = None,
) -> dict:
    """
    lhs: theta(W) * P(some phi_x(w_i) in B) with x ~ theta/theta(W), w_bar ~ Q.
    rhs: mean over w_bar ~ Q of theta(D_bar_B(w_bar)).
    The two sides use independent child streams. Every reference point and
    cluster component drawn counts against the tracker.
    """
    rng_lhs, rng_rhs = rng.spawn(2)
    reference = model.reference
    kernel = model.kernel
    query = DropletQuery(kernel.placement, shape, reference)
    mass = reference.total_mass

    x = reference.geometry.from_chart(reference.sample_points(rng_lhs, n_mc))
    w, owner = sample_parent_batch(kernel.parent, n_mc, rng_lhs)
    track_draws(tracker, n_mc + w.shape[0], "droplet lhs")
    if w.shape[0]:
        inside = _hits(query, x[owner], w, rng_lhs)
        hit = np.bincount(owner, weights=inside.astype(float), minlength=n_mc) > 0
    else:
        hit = np.zeros(n_mc, dtype=bool)
    lhs = EstimateWithError.from_values(mass * hit.astype(float))

    w, owner = sample_parent_batch(kernel.parent, n_outer, rng_rhs)
    track_draws(tracker, w.shape[0] + n_outer * n_inner, "droplet rhs")
    values = []
    for i in range(n_outer):
        w_bar = ClusterVector(w[owner == i], kernel.parent.space)
        values.append(droplet_cluster_measure(query, w_bar, rng_rhs, n_inner).value)
    rhs = EstimateWithError.from_values(values)
    return comparison_record(lhs, rhs)


def condition_probe(
    model: ClusterProcessModel,
    shape: Region,
    rng: np.random.Generator,
    n_samples: int = 200,
    n_mc: int = 2_000,
    tracker: DrawTracker | None = None,
) -> dict:
    """Empirical max of theta(D_B(w)) over sampled components, and the mean cluster size."""
    kernel = model.kernel
    query = DropletQuery(kernel.placement, shape, model.reference)
    components = kernel.parent.component.sample(rng, n_samples)
    track_draws(tracker, n_samples * (1 + n_mc), "condition probe")
    sup = 0.0
    for row in components:
        single = ClusterVector(row[None, :], kernel.parent.space)
        sup = max(sup, droplet_cluster_measure(query, single, rng, n_mc).value)
    sizes = kernel.parent.size.sample(rng, n_samples).astype(float)
    mean_size = EstimateWithError.from_values(sizes) if n_samples >= 2 else EstimateWithError(float(sizes.mean()), 0.0, 1)
    return {
        "sup_droplet_measure_estimate": sup,
        "sup_is_lower_bound": True,
        "mean_cluster_size": mean_size.value,
        "se_mean_cluster_size": mean_size.std_error,
        "n": n_samples,
    }
