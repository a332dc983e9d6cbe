"""Seeded synthetic trip corpus over a grid road network.

Points of interest sit on grid nodes; selected origin/destination pairs get
one to ``routes_per_od`` distinct routes, and trips are noisy copies of those
routes (interior segments dropped, unseen segments injected).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from clustering import segment_set_dissimilarity
from trip_data import History, Trip, dump_trips

log = logging.getLogger("routepredict")

Node = tuple[int, int]

SECONDS_PER_SEGMENT = 10.0
TIMESTAMP_JITTER = 2.0


class GenConfig(BaseModel):
    """Knobs of the synthetic corpus; the defaults give 7 POIs, 17 OD pairs and 781 trips."""

    model_config = ConfigDict(frozen=True)

    n_pois: int = Field(default=7, ge=2)
    n_od_pairs: int = Field(default=17, ge=1)
    routes_per_od: int = Field(default=3, ge=1, le=3)
    trips_total: int = Field(default=781, ge=1)
    p_drop: float = Field(default=0.02, ge=0, le=0.5)
    p_spurious: float = Field(default=0.01, ge=0, le=0.5)
    rng_seed: int = 0
    grid_width: int = Field(default=20, ge=2)
    grid_height: int = Field(default=20, ge=2)
    min_poi_distance: int = Field(default=4, ge=2)
    min_route_dissimilarity: float = Field(default=0.5, ge=0, lt=1)
    max_attempts: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def _check_pairs(self) -> "GenConfig":
        available = self.n_pois * (self.n_pois - 1) // 2
        if self.n_od_pairs > available:
            raise ValueError(
                f"n_od_pairs={self.n_od_pairs} exceeds the {available} pairs "
                f"of {self.n_pois} POIs"
            )
        return self


def segment_id(a: Node, b: Node) -> str:
    return f"w{a[0]}_{a[1]}-{b[0]}_{b[1]}"


@dataclass(frozen=True)
class RoadNetwork:
    width: int
    height: int
    graph: nx.DiGraph

    @property
    def segment_ids(self) -> tuple[str, ...]:
        return tuple(d["segment_id"] for _, _, d in sorted(self.graph.edges(data=True)))

    def path_segments(self, nodes: Sequence[Node]) -> tuple[str, ...]:
        return tuple(self.graph.edges[a, b]["segment_id"] for a, b in itertools.pairwise(nodes))


@dataclass(frozen=True)
class Route:
    route_id: str
    origin: str
    destination: str
    nodes: tuple[Node, ...]
    segments: tuple[str, ...]


class GroundTruthRoute(BaseModel):
    route_id: str
    origin: str
    destination: str
    segments: tuple[str, ...]


class GroundTruth(BaseModel):
    pois: dict[str, tuple[int, int]]
    od_pairs: tuple[tuple[str, str], ...]
    routes: tuple[GroundTruthRoute, ...]
    labels: dict[str, str]


def build_grid_network(width: int, height: int) -> RoadNetwork:
    """Directed segments between 4-neighbours of a ``width`` × ``height`` grid."""
    if width < 2 or height < 2:
        raise ValueError(f"grid must be at least 2x2, got {width}x{height}")
    graph = nx.grid_2d_graph(width, height).to_directed()
    nx.set_edge_attributes(
        graph, {(a, b): segment_id(a, b) for a, b in graph.edges}, "segment_id"
    )
    return RoadNetwork(width=width, height=height, graph=graph)


def _place_pois(
    network: RoadNetwork, config: GenConfig, rng: np.random.Generator
) -> dict[str, Node]:
    nodes = sorted(network.graph.nodes)
    placed: list[Node] = []
    for _ in range(config.max_attempts * config.n_pois):
        if len(placed) == config.n_pois:
            break
        cand = nodes[int(rng.integers(len(nodes)))]
        if all(
            abs(cand[0] - p[0]) + abs(cand[1] - p[1]) >= config.min_poi_distance
            for p in placed
        ):
            placed.append(cand)
    if len(placed) < config.n_pois:
        raise ValueError(
            f"could not place {config.n_pois} POIs at distance >= "
            f"{config.min_poi_distance} on a {network.width}x{network.height} grid"
        )
    return {f"poi-{k}": node for k, node in enumerate(placed)}


def _jittered_path(
    graph: nx.DiGraph, a: Node, b: Node, rng: np.random.Generator
) -> list[Node]:
    """A fewest-segments path whose choice among ties is random."""
    edges = list(graph.edges)
    # Total jitter stays below one hop, so the path length is still minimal.
    jitter = rng.uniform(0, 1e-4, size=len(edges))
    weights = {e: 1.0 + w for e, w in zip(edges, jitter)}
    return nx.shortest_path(graph, a, b, weight=lambda u, v, _: weights[(u, v)])


def _transitions(route: Route) -> set[tuple[str, str]]:
    return set(itertools.pairwise(route.segments))


def _distinct(route: Route, others: Sequence[Route], min_dissimilarity: float) -> bool:
    """Far enough from every other route, and neither contains the other's transitions."""
    segs = set(route.segments)
    steps = _transitions(route)
    for other in others:
        if segment_set_dissimilarity(segs, set(other.segments)) <= min_dissimilarity:
            return False
        other_steps = _transitions(other)
        if steps <= other_steps or other_steps <= steps:
            return False
    return True


def generate_routes(
    network: RoadNetwork,
    config: GenConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[dict[str, Node], list[Route]]:
    """POIs plus ground-truth routes for ``config.n_od_pairs`` random OD pairs.

    The first route of a pair is a shortest path; alternates detour through a
    random waypoint. A route is accepted only if it is a simple path whose
    dissimilarity to every earlier route exceeds ``min_route_dissimilarity``
    and whose transitions neither contain nor are contained in theirs.
    """

    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    graph = network.graph
    pois = _place_pois(network, config, rng)
    names = list(pois)
    pairs = list(itertools.combinations(names, 2))
    chosen = sorted(rng.choice(len(pairs), size=config.n_od_pairs, replace=False).tolist())
    nodes = sorted(graph.nodes)
    routes: list[Route] = []
    for idx in chosen:
        origin, dest = pairs[idx]
        if rng.random() < 0.5:
            origin, dest = dest, origin
        a, b = pois[origin], pois[dest]
        target = int(rng.integers(1, config.routes_per_od + 1))
        found: list[Route] = []
        fallback: Optional[Route] = None
        for _ in range(config.max_attempts):
            if len(found) == target:
                break
            if not found:
                path = _jittered_path(graph, a, b, rng)
            else:
                via = nodes[int(rng.integers(len(nodes)))]
                if via in (a, b):
                    continue
                path = _jittered_path(graph, a, via, rng) + _jittered_path(graph, via, b, rng)[1:]
                if len(set(path)) != len(path):
                    continue
            route = Route(
                route_id=f"{origin}->{dest}#{len(found)}",
                origin=origin,
                destination=dest,
                nodes=tuple(path),
                segments=network.path_segments(path),
            )
            if _distinct(route, routes + found, config.min_route_dissimilarity):
                found.append(route)
            elif not found and fallback is None:
                fallback = route
        if not found and fallback is not None:
            log.warning(
                "route %s overlaps earlier routes; keeping it anyway", fallback.route_id
            )
            found.append(fallback)
        if len(found) < target:
            log.warning(
                "%s->%s: generated %d of %d requested routes", origin, dest, len(found), target
            )
        routes.extend(found)
    log.info("generated %d routes over %d OD pairs", len(routes), len(chosen))
    return pois, routes


def generate_trips(
    routes: Sequence[Route],
    config: GenConfig,
    rng: Optional[np.random.Generator] = None,
) -> History:
    """``trips_total`` noisy copies of uniformly chosen routes, labelled."""
    if not routes:
        raise ValueError("At least one route is required")
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    spurious = itertools.count()
    trips = []
    for k in range(config.trips_total):
        route = routes[int(rng.integers(len(routes)))]
        segs = route.segments
        kept = [segs[0]]
        kept.extend(s for s in segs[1:-1] if rng.random() >= config.p_drop)
        if len(segs) > 1:
            kept.append(segs[-1])
        noisy: list[str] = []
        for pos, seg in enumerate(kept):
            noisy.append(seg)
            if pos < len(kept) - 1 and rng.random() < config.p_spurious:
                noisy.append(f"x{next(spurious)}")
        jitter = rng.uniform(-TIMESTAMP_JITTER, TIMESTAMP_JITTER, size=len(noisy))
        stamps = tuple(
            round(max(0.0, SECONDS_PER_SEGMENT * pos + j), 3) for pos, j in enumerate(jitter)
        )
        trips.append(
            Trip(
                trip_id=f"trip-{k:04d}",
                timestamps=stamps,
                segments=tuple(noisy),
                origin_poi=route.origin,
                destination_poi=route.destination,
                cluster_id=route.route_id,
            )
        )
    return History(trips=tuple(trips))


def generate_corpus(config: GenConfig) -> tuple[History, GroundTruth]:
    """Network, routes and trips drawn from a single seeded generator."""
    rng = np.random.default_rng(config.rng_seed)
    network = build_grid_network(config.grid_width, config.grid_height)
    pois, routes = generate_routes(network, config, rng)
    history = generate_trips(routes, config, rng)
    truth = GroundTruth(
        pois=pois,
        od_pairs=tuple(dict.fromkeys((r.origin, r.destination) for r in routes)),
        routes=tuple(
            GroundTruthRoute(
                route_id=r.route_id,
                origin=r.origin,
                destination=r.destination,
                segments=r.segments,
            )
            for r in routes
        ),
        labels={t.trip_id: t.cluster_id for t in history.trips if t.cluster_id},
    )
    log.info(
        "corpus: %d trips, %d routes, %d OD pairs",
        len(history),
        len(truth.routes),
        len(truth.od_pairs),
    )
    return history, truth


def write_corpus(out_dir: str | Path, history: History, truth: GroundTruth) -> None:
    """Write ``trips.jsonl`` and ``ground_truth.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "trips.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        dump_trips(history, fh)
    (out / "ground_truth.json").write_text(
        truth.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
