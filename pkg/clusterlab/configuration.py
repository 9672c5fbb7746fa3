"""
configuration.py
----------------
Purpose: The point-pattern containers shared by every module.

Key ideas:
- ClusterVector: one whole cluster (an ordered tuple of points, or of parent-space offsets)
- Configuration: finite list of points with multiplicity, plus the window it lives in
- MarkedConfiguration: centres, each carrying its cluster vector as a mark

Marked configurations are stored flat (all cluster points in one array plus an
`owner` index into the centres) so projection and batch evaluation are array ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from .geometry import Box, GeometryMismatchError, Point

Array = NDArray[np.float64]
IndexArray = NDArray[np.intp]


def _as_rows(values: np.ndarray | list, width: int) -> Array:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return np.zeros((0, width))
    return np.atleast_2d(arr)


@dataclass(frozen=True, eq=False)
class ClusterVector:
    """
    An ordered cluster. `space` is a geometry id for clusters in X, or a parent
    space label ("se2", "tangent", "radii", or a geometry id) for offsets in W.
    """
    components: Array
    space: str

    def __post_init__(self) -> None:
        comps = np.asarray(self.components, dtype=float)
        if comps.ndim == 1:
            comps = comps[:, None] if comps.size else comps.reshape(0, 1)
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return int(self.components.shape[0])

    def points(self) -> list[Point]:
        return [Point(tuple(float(c) for c in row), self.space) for row in self.components]

    def append(self, component: np.ndarray) -> "ClusterVector":
        row = np.atleast_2d(np.asarray(component, dtype=float))
        base = self.components if len(self) else self.components.reshape(0, row.shape[1])
        return ClusterVector(np.vstack([base, row]), self.space)


@dataclass(frozen=True, eq=False)
class Configuration:
    """
    A finite configuration in `window`; duplicates are kept (generalized
    configurations). `points` holds geometry coordinates, one row per point.
    """
    points: Array
    geometry_id: str
    window: Box

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def as_points(self) -> list[Point]:
        return [Point(tuple(float(c) for c in row), self.geometry_id) for row in self.points]

    def with_points(self, points: Array) -> "Configuration":
        return Configuration(np.asarray(points, dtype=float), self.geometry_id, self.window)

    @classmethod
    def empty(cls, geometry_id: str, window: Box, coord_dim: int) -> "Configuration":
        return cls(np.zeros((0, coord_dim)), geometry_id, window)


@dataclass(frozen=True, eq=False)
class MarkedConfiguration:
    """
    Centres with their clusters. Cluster k of centre i is the set of rows
    `cluster_points[owner == i]`, in order.
    """
    centres: Array
    cluster_points: Array
    owner: IndexArray
    geometry_id: str
    window: Box
    sizes: IndexArray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        owner = np.asarray(self.owner, dtype=np.intp)
        object.__setattr__(self, "owner", owner)
        if self.sizes is None:
            sizes = np.bincount(owner, minlength=self.n_centres).astype(np.intp)
            object.__setattr__(self, "sizes", sizes)
        if self.cluster_points.shape[0] != owner.shape[0]:
            raise ValueError("owner index must have one entry per cluster point")

    @property
    def n_centres(self) -> int:
        return int(self.centres.shape[0])

    @property
    def n_points(self) -> int:
        return int(self.cluster_points.shape[0])

    def __len__(self) -> int:
        return self.n_centres

    def cluster(self, i: int) -> ClusterVector:
        return ClusterVector(self.cluster_points[self.owner == i], self.geometry_id)

    def pairs(self) -> Iterator[tuple[Point, ClusterVector]]:
        for i, row in enumerate(self.centres):
            yield Point(tuple(float(c) for c in row), self.geometry_id), self.cluster(i)

    def with_cluster_points(self, points: Array) -> "MarkedConfiguration":
        return MarkedConfiguration(
            self.centres, np.asarray(points, dtype=float), self.owner, self.geometry_id, self.window, self.sizes
        )

    def restrict(self, keep: NDArray[np.bool_]) -> "MarkedConfiguration":
        """Keep only the centres flagged in `keep` (and their clusters)."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.cumsum(keep) - 1
        point_mask = keep[self.owner]
        return MarkedConfiguration(
            self.centres[keep],
            self.cluster_points[point_mask],
            remap[self.owner[point_mask]],
            self.geometry_id,
            self.window,
        )

    @classmethod
    def from_pairs(
        cls,
        pairs: list[tuple[Point, ClusterVector]],
        geometry_id: str,
        window: Box,
        coord_dim: int,
    ) -> "MarkedConfiguration":
        centres: list[Array] = []
        blocks: list[Array] = []
        owner: list[IndexArray] = []
        for i, (centre, cluster) in enumerate(pairs):
            if centre.geometry_id != geometry_id:
                raise GeometryMismatchError(centre.geometry_id, geometry_id, "centre")
            if len(cluster) and cluster.space != geometry_id:
                raise GeometryMismatchError(cluster.space, geometry_id, "cluster")
            centres.append(centre.array)
            blocks.append(_as_rows(cluster.components, coord_dim))
            owner.append(np.full(len(cluster), i, dtype=np.intp))
        return cls(
            _as_rows(centres, coord_dim),
            np.vstack(blocks) if blocks else np.zeros((0, coord_dim)),
            np.concatenate(owner) if owner else np.zeros(0, dtype=np.intp),
            geometry_id,
            window,
        )
