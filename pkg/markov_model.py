"""Per-cluster Markov chains over road segments.

Each cluster keeps raw transition and start counts; smoothed probabilities are
computed on demand. For real states i != j with observed outgoing transitions

    a_ij = (c_ij / c_i + eps) / (1 + (N - 1) * eps)

rows never left in training are uniform over the N - 1 off-diagonal states,
self-loops have probability 0, and every transition touching the unseen state
``u`` (index N) has probability eps / (1 + (N + 1) * eps).
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from itertools import pairwise
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Literal, Mapping, Sequence, TextIO

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from trip_data import ClusterSet, Lexicon

log = logging.getLogger("routepredict")

PiMode = Literal["ml", "cluster_uniform", "global_uniform"]
PI_MODES: tuple[str, ...] = ("ml", "cluster_uniform", "global_uniform")

NEG_INF = float("-inf")
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class SmoothingParams:
    epsilon: float
    n: int

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.n < 1:
            raise ValueError(f"lexicon size must be >= 1, got {self.n}")

    @property
    def bar_epsilon(self) -> float:
        """Probability of any transition to or from the unseen state."""
        return self.epsilon / (1 + (self.n + 1) * self.epsilon)

    @property
    def floor(self) -> float:
        """Lower bound of every smoothed real off-diagonal transition."""
        return self.epsilon / (1 + (self.n - 1) * self.epsilon)


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Transition counts of one cluster plus the smoothing used to read them."""

    cluster_id: str
    n: int
    counts: Mapping[int, Mapping[int, int]]
    row_totals: Mapping[int, int]
    start_counts: Mapping[int, int]
    visited: frozenset[int]
    trips_in_cluster: int
    epsilon: float
    pi_mode: PiMode = "global_uniform"
    _log_denom: float = field(init=False, repr=False)
    _log_bar_eps: float = field(init=False, repr=False)
    _log_uniform_row: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.pi_mode not in PI_MODES:
            raise ValueError(f"Unknown pi_mode '{self.pi_mode}'")
        params = SmoothingParams(self.epsilon, self.n)
        object.__setattr__(self, "_log_denom", math.log1p((self.n - 1) * self.epsilon))
        object.__setattr__(self, "_log_bar_eps", math.log(params.bar_epsilon))
        object.__setattr__(
            self,
            "_log_uniform_row",
            -math.log(self.n - 1) if self.n > 1 else NEG_INF,
        )

    @property
    def u(self) -> int:
        return self.n

    @property
    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(self.epsilon, self.n)

    @property
    def bar_epsilon(self) -> float:
        return self.smoothing.bar_epsilon

    def with_epsilon(self, epsilon: float) -> "ClusterModel":
        """Same counts, different smoothing."""
        if epsilon == self.epsilon:
            return self
        return replace(self, epsilon=epsilon)

    def _check(self, state: int) -> None:
        if not 0 <= state <= self.n:
            raise IndexError(f"state {state} outside [0, {self.n}]")

    def transition_prob(self, i: int, j: int) -> float:
        self._check(i)
        self._check(j)
        if i == self.n or j == self.n:
            return self.smoothing.bar_epsilon
        if i == j:
            return 0.0
        total = self.row_totals.get(i, 0)
        if total == 0:
            return 1.0 / (self.n - 1)
        ml = self.counts[i].get(j, 0) / total
        return (ml + self.epsilon) / (1 + (self.n - 1) * self.epsilon)

    def log_transition(self, i: int, j: int) -> float:
        self._check(i)
        self._check(j)
        if i == self.n or j == self.n:
            return self._log_bar_eps
        if i == j:
            return NEG_INF
        total = self.row_totals.get(i, 0)
        if total == 0:
            return self._log_uniform_row
        ml = self.counts[i].get(j, 0) / total
        return math.log(ml + self.epsilon) - self._log_denom

    def initial_prob(self, i: int) -> float:
        self._check(i)
        if i == self.n:
            return self.smoothing.bar_epsilon
        if self.pi_mode == "ml":
            if self.trips_in_cluster == 0:
                raise ValueError(
                    f"cluster '{self.cluster_id}' has no trips; "
                    "ml initial probabilities are undefined"
                )
            return self.start_counts.get(i, 0) / self.trips_in_cluster
        if self.pi_mode == "cluster_uniform":
            if i not in self.visited:
                return 0.0
            return 1.0 / len(self.visited)
        return 1.0 / self.n

    def log_initial(self, i: int) -> float:
        """Log of :meth:`initial_prob`; an empty ml cluster gives -inf."""
        if self.pi_mode == "ml" and self.trips_in_cluster == 0:
            self._check(i)
            return self._log_bar_eps if i == self.n else NEG_INF
        p = self.initial_prob(i)
        return math.log(p) if p > 0 else NEG_INF


def train_counts(
    trips: Iterable[Sequence[int]],
    lexicon: Lexicon,
    *,
    cluster_id: str = "",
    epsilon: float = 1e-6,
    pi_mode: PiMode = "global_uniform",
) -> ClusterModel:
    """Count adjacent pairs and first states over one cluster's encoded trips."""
    n = lexicon.n
    counts: defaultdict[int, Counter[int]] = defaultdict(Counter)
    starts: Counter[int] = Counter()
    visited: set[int] = set()
    n_trips = 0
    for states in trips:
        if not states:
            raise ValueError(f"cluster '{cluster_id}': empty trip")
        for s in states:
            if not 0 <= s < n:
                raise ValueError(
                    f"cluster '{cluster_id}': state {s} is not a lexicon segment"
                )
        n_trips += 1
        starts[states[0]] += 1
        visited.update(states)
        for a, b in pairwise(states):
            if a == b:
                raise ValueError(
                    f"cluster '{cluster_id}': consecutive duplicate state {a}; "
                    "deduplicate trips before training"
                )
            counts[a][b] += 1
    frozen_counts = {i: MappingProxyType(dict(row)) for i, row in counts.items()}
    return ClusterModel(
        cluster_id=cluster_id,
        n=n,
        counts=MappingProxyType(frozen_counts),
        row_totals=MappingProxyType({i: sum(row.values()) for i, row in counts.items()}),
        start_counts=MappingProxyType(dict(starts)),
        visited=frozenset(visited),
        trips_in_cluster=n_trips,
        epsilon=epsilon,
        pi_mode=pi_mode,
    )


def train_models(
    encoded: Mapping[str, Sequence[int]],
    cluster_set: ClusterSet,
    lexicon: Lexicon,
    *,
    epsilon: float = 1e-6,
    pi_mode: PiMode = "global_uniform",
) -> tuple[ClusterModel, ...]:
    """One model per cluster, in ``cluster_set`` order; empty clusters included."""
    models = []
    for cluster in cluster_set.clusters:
        try:
            trips = [encoded[tid] for tid in cluster.trip_ids]
        except KeyError as exc:
            raise ValueError(
                f"cluster '{cluster.cluster_id}' references untrained trip {exc}"
            ) from None
        models.append(
            train_counts(
                trips,
                lexicon,
                cluster_id=cluster.cluster_id,
                epsilon=epsilon,
                pi_mode=pi_mode,
            )
        )
    log.debug("trained %d cluster models over N=%d segments", len(models), lexicon.n)
    return tuple(models)


def step_log_likelihood(prev: float, model: ClusterModel, frm: int, to: int) -> float:
    """Extend a running log-likelihood by one transition."""
    if prev == NEG_INF:
        return NEG_INF
    return prev + model.log_transition(frm, to)


def trip_log_likelihood(model: ClusterModel, states: Sequence[int]) -> float:
    """log pi(r_1) + sum of log a(r_{t-1}, r_t)."""
    if not states:
        raise ValueError("trip must contain at least one state")
    ll = model.log_initial(states[0])
    for a, b in pairwise(states):
        ll = step_log_likelihood(ll, model, a, b)
    return ll


# ---- bundle I/O -----------------------------------------------------------------


class ClusterCounts(BaseModel):
    """Raw counts of one cluster as stored in a model bundle."""

    model_config = ConfigDict(frozen=True)

    cluster_id: str
    trips: int = Field(ge=0)
    starts: tuple[tuple[int, int], ...] = ()
    transitions: tuple[tuple[int, int, int], ...] = ()


class ModelBundle(BaseModel):
    """Lexicon plus per-cluster counts; smoothing is applied when loading."""

    model_config = ConfigDict(frozen=True)

    format_version: Literal[1] = BUNDLE_VERSION
    segments: tuple[str, ...]
    epsilon: float = Field(gt=0)
    pi_mode: PiMode
    clusters: tuple[ClusterCounts, ...]


def to_bundle(lexicon: Lexicon, models: Sequence[ClusterModel]) -> ModelBundle:
    if not models:
        raise ValueError("Cannot bundle zero models")
    return ModelBundle(
        segments=lexicon.segments,
        epsilon=models[0].epsilon,
        pi_mode=models[0].pi_mode,
        clusters=tuple(
            ClusterCounts(
                cluster_id=m.cluster_id,
                trips=m.trips_in_cluster,
                starts=tuple(sorted(m.start_counts.items())),
                transitions=tuple(
                    (i, j, c)
                    for i in sorted(m.counts)
                    for j, c in sorted(m.counts[i].items())
                ),
            )
            for m in models
        ),
    )


def from_bundle(
    bundle: ModelBundle, *, epsilon: float | None = None
) -> tuple[Lexicon, tuple[ClusterModel, ...]]:
    """Rebuild the lexicon and models; ``epsilon`` overrides the stored value."""
    lexicon = Lexicon.from_segments(bundle.segments)
    eps = bundle.epsilon if epsilon is None else epsilon
    models = []
    for cc in bundle.clusters:
        counts: defaultdict[int, dict[int, int]] = defaultdict(dict)
        visited = {i for i, _ in cc.starts}
        for i, j, c in cc.transitions:
            counts[i][j] = c
            visited.update((i, j))
        if any(not 0 <= s < lexicon.n for s in visited):
            raise ValueError(f"cluster '{cc.cluster_id}' references states outside the lexicon")
        models.append(
            ClusterModel(
                cluster_id=cc.cluster_id,
                n=lexicon.n,
                counts=MappingProxyType(
                    {i: MappingProxyType(row) for i, row in counts.items()}
                ),
                row_totals=MappingProxyType(
                    {i: sum(row.values()) for i, row in counts.items()}
                ),
                start_counts=MappingProxyType(dict(cc.starts)),
                visited=frozenset(visited),
                trips_in_cluster=cc.trips,
                epsilon=eps,
                pi_mode=bundle.pi_mode,
            )
        )
    return lexicon, tuple(models)


def save_bundle(bundle: ModelBundle, stream: TextIO) -> None:
    stream.write(bundle.model_dump_json())
    stream.write("\n")


def load_bundle(path: str | Path) -> ModelBundle:
    try:
        return ModelBundle.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ValueError(f"Invalid model bundle {path}: {exc.errors()[0]['msg']}") from exc
