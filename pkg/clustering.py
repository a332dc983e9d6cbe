"""Assign history trips to clusters by origin/destination or by route."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import AbstractSet, Hashable, Literal

import numpy as np
from scipy import sparse
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from trip_data import Cluster, ClusterSet, History, Trip

log = logging.getLogger("routepredict")

Similarity = Literal["jaccard", "shared_over_total"]

# Average linkage can round a boundary merge a few ulps past the threshold.
_MERGE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DissimilarityMatrix:
    """Symmetric trip × trip dissimilarities in [0, 1] with a zero diagonal."""

    trip_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.trip_ids)
        if self.values.shape != (n, n):
            raise ValueError(
                f"Dissimilarity matrix shape {self.values.shape} does not match {n} trips"
            )
        if n and (
            not np.allclose(self.values, self.values.T)
            or np.any(np.diag(self.values) != 0)
            or self.values.min() < 0
            or self.values.max() > 1
        ):
            raise ValueError(
                "Dissimilarity matrix must be symmetric, in [0, 1], with zero diagonal"
            )

    @property
    def n(self) -> int:
        return len(self.trip_ids)


def _ordered_groups(trip_ids: list[str], keys: list[Hashable]) -> list[tuple[Hashable, list[str]]]:
    """Group trips by key, ordered by first appearance over sorted trip ids."""
    groups: dict[Hashable, list[str]] = {}
    for tid, key in sorted(zip(trip_ids, keys), key=lambda p: p[0]):
        groups.setdefault(key, []).append(tid)
    return list(groups.items())


def cluster_by_od(history: History) -> ClusterSet:
    """Cluster trips sharing origin and destination.

    The key is the (origin_poi, destination_poi) label pair when every trip
    carries both labels, otherwise the (first segment, last segment) pair.
    """

    if not history.trips:
        raise ValueError("Cannot cluster an empty history")
    labeled = [
        t.origin_poi is not None and t.destination_poi is not None
        for t in history.trips
    ]
    if all(labeled):
        keys: list[Hashable] = [(t.origin_poi, t.destination_poi) for t in history.trips]
    elif not any(labeled):
        keys = [(t.segments[0], t.segments[-1]) for t in history.trips]
    else:
        raise ValueError(
            "Mixed origin/destination labeling: either every trip carries "
            "origin_poi and destination_poi or none does"
        )
    groups = _ordered_groups(list(history.trip_ids), keys)
    clusters = tuple(
        Cluster(cluster_id=_od_id(o, d), trip_ids=tuple(tids))
        for (o, d), tids in groups  # type: ignore[misc]
    )
    log.info("od clustering: %d trips -> %d clusters", len(history), len(clusters))
    return ClusterSet(clusters=clusters)


def _od_id(origin: object, destination: object) -> str:
    """``origin->destination`` with ``->`` and backslashes inside names escaped."""

    def escape(name: object) -> str:
        return str(name).replace("\\", "\\\\").replace("->", "\\->")

    return f"{escape(origin)}->{escape(destination)}"


def segment_set_dissimilarity(
    sa: AbstractSet[str], sb: AbstractSet[str], similarity: Similarity = "jaccard"
) -> float:
    shared = len(sa & sb)
    if similarity == "jaccard":
        union = len(sa | sb)
        return (union - shared) / union
    if similarity == "shared_over_total":
        total = len(sa) + len(sb)
        return (total - shared) / total
    raise ValueError(f"Unknown similarity '{similarity}'")


def route_dissimilarity(a: Trip, b: Trip, similarity: Similarity = "jaccard") -> float:
    """One minus the share of road segments common to both trips."""
    return segment_set_dissimilarity(set(a.segments), set(b.segments), similarity)


def dissimilarity_matrix(history: History, similarity: Similarity = "jaccard") -> DissimilarityMatrix:
    """All pairwise route dissimilarities via a sparse trip × segment incidence."""
    if similarity not in ("jaccard", "shared_over_total"):
        raise ValueError(f"Unknown similarity '{similarity}'")
    n = len(history)
    columns: dict[str, int] = {}
    rows: list[int] = []
    cols: list[int] = []
    for r, trip in enumerate(history.trips):
        for seg in dict.fromkeys(trip.segments):
            rows.append(r)
            cols.append(columns.setdefault(seg, len(columns)))
    incidence = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, len(columns))
    )
    shared = (incidence @ incidence.T).toarray()
    sizes = np.asarray(incidence.sum(axis=1)).ravel()
    total = sizes[:, None] + sizes[None, :]
    if similarity == "jaccard":
        total = total - shared
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.divide(total - shared, total, out=np.zeros_like(shared), where=total > 0)
    np.fill_diagonal(values, 0.0)
    values = np.clip(values, 0.0, 1.0)
    return DissimilarityMatrix(trip_ids=history.trip_ids, values=values)


def hierarchical_cluster(d: DissimilarityMatrix, threshold: float) -> ClusterSet:
    """Average-linkage agglomeration, merging while the linkage stays <= threshold."""
    if d.n == 0:
        raise ValueError("Cannot cluster zero trips")
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if d.n == 1:
        labels = np.ones(1, dtype=int)
    else:
        tree = linkage(squareform(d.values, checks=False), method="average")
        labels = fcluster(tree, t=threshold + _MERGE_TOLERANCE, criterion="distance")
    groups = _ordered_groups(list(d.trip_ids), [int(x) for x in labels])
    clusters = tuple(
        Cluster(cluster_id=f"route-{k:03d}", trip_ids=tuple(tids))
        for k, (_, tids) in enumerate(groups)
    )
    log.info(
        "route clustering: %d trips -> %d clusters (threshold %s)",
        d.n,
        len(clusters),
        threshold,
    )
    return ClusterSet(clusters=clusters)


def cluster_by_route(
    history: History, threshold: float = 0.3, similarity: Similarity = "jaccard"
) -> ClusterSet:
    return hierarchical_cluster(dissimilarity_matrix(history, similarity), threshold)


def cluster_history(
    history: History,
    mode: Literal["od", "route"],
    threshold: float = 0.3,
    similarity: Similarity = "jaccard",
) -> ClusterSet:
    if mode == "od":
        return cluster_by_od(history)
    if mode == "route":
        return cluster_by_route(history, threshold, similarity)
    raise ValueError(f"Unknown clustering mode '{mode}'")
