"""Trip records, histories, the segment lexicon and cluster assignments.

Trips arrive as one JSON object per line (the trip-JSONL format)::

    {"trip_id": "t1", "timestamps": [0, 5], "segments": ["a", "b"]}

with optional ``origin_poi``, ``destination_poi`` and ``cluster_id`` labels.
Everything here is immutable once built.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Annotated, Iterable, Mapping, NamedTuple, Optional, TextIO

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StringConstraints,
    ValidationError,
    model_validator,
)

log = logging.getLogger("routepredict")

SegmentId = Annotated[str, StringConstraints(min_length=1)]


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    msg = err.get("msg", str(exc))
    return f"{loc}: {msg}" if loc else msg


class Trip(BaseModel):
    """One journey: timestamps and the road segments visited, in order."""

    model_config = ConfigDict(frozen=True)

    trip_id: str = Field(min_length=1)
    timestamps: tuple[float, ...]
    segments: tuple[SegmentId, ...]
    origin_poi: Optional[str] = None
    destination_poi: Optional[str] = None
    cluster_id: Optional[str] = None

    @model_validator(mode="after")
    def _check_lengths(self) -> "Trip":
        if len(self.timestamps) != len(self.segments):
            raise ValueError(
                f"trip {self.trip_id!r} has {len(self.timestamps)} timestamps "
                f"but {len(self.segments)} segments"
            )
        if not self.segments:
            raise ValueError(f"trip {self.trip_id!r} has no segments")
        prev = 0.0
        for t in self.timestamps:
            if t < prev:
                raise ValueError(
                    f"trip {self.trip_id!r} timestamps must be non-negative "
                    "and non-decreasing"
                )
            prev = t
        return self

    @property
    def length(self) -> int:
        return len(self.segments)


class History(BaseModel):
    """A driver's trip history; trip ids are unique."""

    model_config = ConfigDict(frozen=True)

    trips: tuple[Trip, ...] = ()

    @model_validator(mode="after")
    def _check_unique(self) -> "History":
        seen: set[str] = set()
        for trip in self.trips:
            if trip.trip_id in seen:
                raise ValueError(f"Duplicate trip_id '{trip.trip_id}'")
            seen.add(trip.trip_id)
        return self

    def __len__(self) -> int:
        return len(self.trips)

    @property
    def trip_ids(self) -> tuple[str, ...]:
        return tuple(t.trip_id for t in self.trips)

    def get(self, trip_id: str) -> Trip:
        for trip in self.trips:
            if trip.trip_id == trip_id:
                return trip
        raise KeyError(trip_id)

    def deduplicated(self) -> "History":
        return History(trips=tuple(dedup_consecutive(t) for t in self.trips))

    def subset(self, trip_ids: Iterable[str]) -> "History":
        """Keep only ``trip_ids``, in history order."""
        wanted = set(trip_ids)
        unknown = wanted - set(self.trip_ids)
        if unknown:
            raise ValueError(f"Unknown trip ids: {', '.join(sorted(unknown))}")
        return History(trips=tuple(t for t in self.trips if t.trip_id in wanted))


class EncodedTrip(NamedTuple):
    trip_id: str
    states: tuple[int, ...]


@dataclass(frozen=True)
class Lexicon:
    """Dense index of every training segment; ``u`` (== N) is the unseen state."""

    segments: tuple[str, ...]
    index: Mapping[str, int]

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def u(self) -> int:
        return len(self.segments)

    @classmethod
    def from_segments(cls, segments: Iterable[str]) -> "Lexicon":
        ordered = tuple(segments)
        index = {s: i for i, s in enumerate(ordered)}
        if len(index) != len(ordered):
            raise ValueError("Lexicon segments must be unique")
        return cls(segments=ordered, index=MappingProxyType(index))


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    cluster_id: str = Field(min_length=1)
    trip_ids: tuple[str, ...] = ()


class ClusterSet(BaseModel):
    """Assignment of trips to clusters; no trip belongs to two clusters."""

    model_config = ConfigDict(frozen=True)

    clusters: tuple[Cluster, ...]

    @model_validator(mode="after")
    def _check_disjoint(self) -> "ClusterSet":
        ids: set[str] = set()
        members: set[str] = set()
        for c in self.clusters:
            if c.cluster_id in ids:
                raise ValueError(f"Duplicate cluster_id '{c.cluster_id}'")
            ids.add(c.cluster_id)
            for tid in c.trip_ids:
                if tid in members:
                    raise ValueError(f"Trip '{tid}' appears in more than one cluster")
                members.add(tid)
        return self

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def cluster_ids(self) -> tuple[str, ...]:
        return tuple(c.cluster_id for c in self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c.trip_ids) for c in self.clusters)

    def cluster_of(self) -> dict[str, str]:
        """Map trip_id → cluster_id."""
        return {tid: c.cluster_id for c in self.clusters for tid in c.trip_ids}

    def restrict(self, trip_ids: Iterable[str]) -> "ClusterSet":
        """Keep only ``trip_ids``; every cluster survives, possibly empty."""
        keep = set(trip_ids)
        return ClusterSet(
            clusters=tuple(
                Cluster(
                    cluster_id=c.cluster_id,
                    trip_ids=tuple(t for t in c.trip_ids if t in keep),
                )
                for c in self.clusters
            )
        )

    def check_partition(self, history: History) -> None:
        """Raise ValueError unless every history trip is in exactly one cluster."""
        assigned = self.cluster_of()
        missing = [t for t in history.trip_ids if t not in assigned]
        if missing:
            raise ValueError(
                f"{len(missing)} trips have no cluster, e.g. '{missing[0]}'"
            )
        extra = set(assigned) - set(history.trip_ids)
        if extra:
            raise ValueError(
                f"Clusters reference unknown trips, e.g. '{sorted(extra)[0]}'"
            )


def parse_trips(stream: Iterable[bytes | str]) -> History:
    """Read trip-JSONL records into a :class:`History` (no dedup applied)."""
    trips: list[Trip] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: malformed trip record: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise ValueError(f"line {lineno}: trip record must be a JSON object")
        try:
            trips.append(Trip.model_validate(record))
        except ValidationError as exc:
            raise ValueError(
                f"line {lineno}: invalid trip record: {_first_error(exc)}"
            ) from exc
    try:
        history = History(trips=tuple(trips))
    except ValidationError as exc:
        raise ValueError(_first_error(exc)) from exc
    log.debug("parsed %d trips", len(history))
    return history


def load_trips(path: str | Path) -> History:
    with Path(path).open("rb") as fh:
        return parse_trips(fh)


def dump_trips(history: History, stream: TextIO) -> None:
    """Write ``history`` in trip-JSONL format, one record per line."""
    for trip in history.trips:
        record = trip.model_dump(mode="json", exclude_none=True)
        stream.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
        stream.write("\n")


def dedup_consecutive(trip: Trip) -> Trip:
    """Collapse runs of the same segment to their first element and timestamp."""
    segs = trip.segments
    keep = [0] + [k for k in range(1, len(segs)) if segs[k] != segs[k - 1]]
    if len(keep) == len(segs):
        return trip
    return trip.model_copy(
        update={
            "segments": tuple(segs[k] for k in keep),
            "timestamps": tuple(trip.timestamps[k] for k in keep),
        }
    )


def build_lexicon(history: History) -> Lexicon:
    """Index segments by first appearance over trips sorted by trip_id."""
    if not history.trips:
        raise ValueError("Cannot build a lexicon from an empty history")
    ordered: dict[str, None] = {}
    for trip in sorted(history.trips, key=lambda t: t.trip_id):
        for seg in trip.segments:
            ordered.setdefault(seg, None)
    return Lexicon.from_segments(ordered)


def encode_trip(trip: Trip, lexicon: Lexicon) -> EncodedTrip:
    """Map segments to dense indices; segments outside the lexicon become ``u``."""
    u = lexicon.u
    index = lexicon.index
    return EncodedTrip(trip.trip_id, tuple(index.get(s, u) for s in trip.segments))


def decode_state(lexicon: Lexicon, state: int) -> Optional[str]:
    """Return the segment for ``state``; ``None`` for the unseen state."""
    if state == lexicon.u:
        return None
    if not 0 <= state < lexicon.n:
        raise IndexError(f"state {state} outside [0, {lexicon.u}]")
    return lexicon.segments[state]


def load_clusters(path: str | Path) -> ClusterSet:
    try:
        return ClusterSet.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ValueError(f"Invalid cluster file {path}: {_first_error(exc)}") from exc


def dump_clusters(cluster_set: ClusterSet, stream: TextIO) -> None:
    stream.write(cluster_set.model_dump_json(indent=2))
    stream.write("\n")
