"""
process.py
----------
Purpose: Assemble the cluster process from (theta, centre law, kernel) and sample it.

Key ideas:
- sample_marked: centres on the window dilated by the cluster range R
  ("plus-sampling"), then one independent cluster per centre
- project: forget centres, unpack clusters, crop to the window (multiplicities kept)
- sample_via_varpi: the same draws routed through a configuration of whole
  clusters before unpacking; identical output for identical rng streams
- properness_report: clusters hitting B, exact duplicates, nearest-pair distances

Optional DrawTracker hooks let a run cap the number of drawn points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import structlog

from .budget import DrawTracker
from .centres import CentreProcess, ReferenceMeasure, sample_centres
from .clusters import ClusterKernel, sample_parent_batch
from .configuration import ClusterVector, Configuration, MarkedConfiguration
from .geometry import Box, GeometryBackend, Region, backend_for
from .replicas import run_replicas
from .stats import (
    EstimateWithError,
    TestFunction,
    duplicate_count,
    min_pairwise_distance,
    pair_functional,
    two_sample_ks,
)

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ClusterProcessModel:
    geometry: GeometryBackend
    reference: ReferenceMeasure
    centres: CentreProcess
    kernel: ClusterKernel
    cluster_range: float | None = None

    def __post_init__(self) -> None:
        support = self.kernel.parent.support_radius
        if not math.isfinite(self.range):
            raise ValueError("cluster_range must be set for kernels without a natural range")
        if math.isfinite(support) and self.range < support:
            raise ValueError(f"cluster_range {self.range} is smaller than the kernel support radius {support}")

    @property
    def range(self) -> float:
        return float(self.cluster_range) if self.cluster_range is not None else self.kernel.cluster_range

    @property
    def window(self) -> Box:
        return self.reference.window

    @cached_property
    def plus_window(self) -> Box:
        return self.geometry.chart_dilation(self.reference.window, self.range)


def track_draws(tracker: DrawTracker | None, n: int, context: str) -> None:
    if tracker is not None:
        tracker.add_draws(n, context)


def sample_marked(
    model: ClusterProcessModel, rng: np.random.Generator, tracker: DrawTracker | None = None
) -> MarkedConfiguration:
    centres = sample_centres(model.centres, rng, window=model.plus_window)
    track_draws(tracker, len(centres), "centres")
    w, owner = sample_parent_batch(model.kernel.parent, len(centres), rng)
    track_draws(tracker, w.shape[0], "cluster points")
    points = model.kernel.place_batch(centres.points[owner], w, rng)
    return MarkedConfiguration(centres.points, points, owner, model.geometry.geometry_id, model.window)


def _crop(points: np.ndarray, geometry: GeometryBackend, window: Box) -> np.ndarray:
    if points.shape[0] == 0:
        return points
    return points[window.contains(geometry.to_chart(points))]


def project(marked: MarkedConfiguration, geometry: GeometryBackend | None = None) -> Configuration:
    backend = geometry or backend_for(marked.geometry_id)
    kept = _crop(marked.cluster_points, backend, marked.window)
    return Configuration(kept, marked.geometry_id, marked.window)


def sample_cluster_process(
    model: ClusterProcessModel, rng: np.random.Generator, tracker: DrawTracker | None = None
) -> Configuration:
    return project(sample_marked(model, rng, tracker), model.geometry)


def cluster_configuration(
    model: ClusterProcessModel, rng: np.random.Generator, tracker: DrawTracker | None = None
) -> list[ClusterVector]:
    """A configuration of whole clusters: each centre's cluster vector, centres dropped."""
    centres = sample_centres(model.centres, rng, window=model.plus_window)
    track_draws(tracker, len(centres), "centres")
    w, owner = sample_parent_batch(model.kernel.parent, len(centres), rng)
    track_draws(tracker, w.shape[0], "cluster points")
    points = model.kernel.place_batch(centres.points[owner], w, rng)
    gid = model.geometry.geometry_id
    splits = np.cumsum(np.bincount(owner, minlength=len(centres)))[:-1]
    return [ClusterVector(block, gid) for block in np.split(points, splits)] if len(centres) else []


def unpack(clusters: list[ClusterVector], model: ClusterProcessModel) -> Configuration:
    """Put every component of every cluster into one configuration, cropped to the window."""
    coord_dim = model.geometry.coord_dim
    blocks = [c.components for c in clusters if len(c)]
    points = np.vstack(blocks) if blocks else np.zeros((0, coord_dim))
    return Configuration(_crop(points, model.geometry, model.window), model.geometry.geometry_id, model.window)


def sample_via_varpi(
    model: ClusterProcessModel, rng: np.random.Generator, tracker: DrawTracker | None = None
) -> Configuration:
    return unpack(cluster_configuration(model, rng, tracker), model)


def sample_replicas(
    model: ClusterProcessModel,
    rng: np.random.Generator,
    n_replicas: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
    pipeline: str = "project",
) -> list[Configuration]:
    sampler = sample_via_varpi if pipeline == "varpi" else sample_cluster_process
    return run_replicas(lambda r: sampler(model, r, tracker), rng, n_replicas, threads, label=f"sample_{pipeline}")


def sample_marked_replicas(
    model: ClusterProcessModel,
    rng: np.random.Generator,
    n_replicas: int,
    threads: int = 1,
    tracker: DrawTracker | None = None,
) -> list[MarkedConfiguration]:
    return run_replicas(lambda r: sample_marked(model, r, tracker), rng, n_replicas, threads, label="sample_marked")


def varpi_check(
    model: ClusterProcessModel,
    f: TestFunction,
    rng: np.random.Generator,
    n_replicas: int,
    threads: int = 1,
    alpha: float = 0.001,
    tracker: DrawTracker | None = None,
) -> dict:
    """Two-sample KS test on <f, gamma> between the projection and cluster-configuration pipelines."""
    rng_a, rng_b = rng.spawn(2)
    a = [pair_functional(f, s) for s in sample_replicas(model, rng_a, n_replicas, threads, tracker)]
    b = [pair_functional(f, s) for s in sample_replicas(model, rng_b, n_replicas, threads, tracker, "varpi")]
    record = two_sample_ks(a, b, alpha)
    record.update({"mean_project": float(np.mean(a)), "mean_varpi": float(np.mean(b))})
    return record


@dataclass(frozen=True)
class PropernessReport:
    mean_clusters_hitting: EstimateWithError
    multiplicity_count: int
    min_distance_quantiles: dict[str, float]
    min_distance_histogram: tuple[list[int], list[float]]

    def to_record(self) -> dict:
        return {
            "mean_clusters_hitting_B": self.mean_clusters_hitting.value,
            "se_clusters_hitting_B": self.mean_clusters_hitting.std_error,
            "multiplicity_count": self.multiplicity_count,
            "min_distance_quantiles": self.min_distance_quantiles,
            "min_distance_histogram": {
                "counts": self.min_distance_histogram[0],
                "edges": self.min_distance_histogram[1],
            },
            "n": self.mean_clusters_hitting.n,
        }


def _properness_one(model: ClusterProcessModel, region: Region, rng: np.random.Generator, tracker):
    marked = sample_marked(model, rng, tracker)
    hits = 0
    if marked.n_points:
        inside = region.contains(model.geometry.to_chart(marked.cluster_points))
        hits = int(np.unique(marked.owner[inside]).size)
    config = project(marked, model.geometry)
    return hits, duplicate_count(config), min_pairwise_distance(config)


def properness_report(
    model: ClusterProcessModel,
    rng: np.random.Generator,
    n_replicas: int,
    region: Region,
    threads: int = 1,
    bins: int = 20,
    tracker: DrawTracker | None = None,
) -> PropernessReport:
    if n_replicas < 1:
        raise ValueError("properness_report needs n_replicas >= 1")
    rows = run_replicas(lambda r: _properness_one(model, region, r, tracker), rng, n_replicas, threads, "properness")
    hits = np.array([h for h, _, _ in rows], dtype=float)
    dupes = int(sum(d for _, d, _ in rows))
    dists = np.array([m for _, _, m in rows if m is not None], dtype=float)
    if hits.size >= 2:
        hitting = EstimateWithError.from_values(hits)
    else:
        hitting = EstimateWithError(float(hits.mean()), 0.0, int(hits.size))
    if dists.size:
        q = np.quantile(dists, [0.0, 0.05, 0.5, 0.95])
        quantiles = {"min": float(q[0]), "q05": float(q[1]), "median": float(q[2]), "q95": float(q[3])}
        counts, edges = np.histogram(dists, bins=bins)
        histogram = ([int(c) for c in counts], [float(e) for e in edges])
    else:
        quantiles, histogram = {}, ([], [])
    if dupes:
        log.warning("exact_duplicates_found", count=dupes, replicas=n_replicas)
    return PropernessReport(hitting, dupes, quantiles, histogram)
