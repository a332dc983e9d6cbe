"""Evaluation protocols: split cross-validation, leave-one-out, incremental
training and (alpha, epsilon) grid sweeps.

Cluster labels always come from clustering the full history once; folds only
decide which trips the Markov chains are trained on. Folds run concurrently in
worker threads and their results are aggregated in trip_id order, so reports
do not depend on scheduling.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence, TextIO

import numpy as np
import pandas as pd

from markov_model import ClusterModel, train_models
from predictor import (
    Decision,
    PosteriorUndefinedError,
    PredictorConfig,
    make_priors,
    new_session,
)
from trip_data import (
    ClusterSet,
    EncodedTrip,
    History,
    Lexicon,
    build_lexicon,
    encode_trip,
)

log = logging.getLogger("routepredict")

SWEEP_COLUMNS = [
    "alpha",
    "epsilon",
    "clustering_mode",
    "protocol",
    "failure_rate",
    "mean_fraction_used",
    "n_trips",
]
INCREMENTAL_COLUMNS = ["m", "failure_rate", "mean_fraction_used"]
OUTCOME_COLUMNS = [
    "trip_id",
    "true_cluster",
    "predicted_cluster",
    "segments_at_decision",
    "trip_length",
    "fraction_used",
]


@dataclass(frozen=True)
class EvalOutcome:
    trip_id: str
    true_cluster: str
    predicted_cluster: Optional[str]
    segments_at_decision: Optional[int]
    trip_length: int

    @property
    def fraction_used(self) -> Optional[float]:
        if self.segments_at_decision is None:
            return None
        return self.segments_at_decision / self.trip_length

    @property
    def correct(self) -> bool:
        return self.predicted_cluster == self.true_cluster


@dataclass(frozen=True)
class EvalReport:
    n_trips: int
    n_wrong: int
    n_no_prediction: int
    failure_rate: float
    mean_fraction_used: Optional[float]
    outcomes: tuple[EvalOutcome, ...]

    @property
    def n_correct(self) -> int:
        return self.n_trips - self.n_wrong - self.n_no_prediction

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[EvalOutcome]) -> "EvalReport":
        ordered = tuple(sorted(outcomes, key=lambda o: o.trip_id))
        if not ordered:
            raise ValueError("Cannot report on zero trips")
        n_none = sum(1 for o in ordered if o.predicted_cluster is None)
        n_wrong = sum(
            1 for o in ordered if o.predicted_cluster is not None and not o.correct
        )
        # Wrong and absent predictions do not count towards the mean.
        fractions = [o.fraction_used for o in ordered if o.correct]
        return cls(
            n_trips=len(ordered),
            n_wrong=n_wrong,
            n_no_prediction=n_none,
            failure_rate=(n_wrong + n_none) / len(ordered),
            mean_fraction_used=float(np.mean(fractions)) if fractions else None,
            outcomes=ordered,
        )


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    """Pool the outcomes of several reports into one."""
    return EvalReport.from_outcomes(o for r in reports for o in r.outcomes)


def predict_trip(
    models: Sequence[ClusterModel],
    priors: Sequence[float],
    config: PredictorConfig,
    trip: EncodedTrip,
    true_cluster: str,
) -> EvalOutcome:
    """Feed ``trip`` segment by segment until a decision or the trip ends.

    A trip no cluster can explain, such as one whose first segment starts no
    training trip under ``pi_mode="ml"``, yields an outcome without a
    prediction.
    """
    states = trip.states
    decision: Optional[Decision]
    try:
        session = new_session(models, priors, config, states[0])
        for state in states[1:]:
            if session.decided is not None:
                break
            session.observe_segment(state)
    except PosteriorUndefinedError as exc:
        log.debug("trip %s: %s", trip.trip_id, exc)
        decision = None
    else:
        decision = session.finish()
    return EvalOutcome(
        trip_id=trip.trip_id,
        true_cluster=true_cluster,
        predicted_cluster=decision.cluster_id if decision else None,
        segments_at_decision=decision.segments_seen if decision else None,
        trip_length=len(states),
    )


def evaluate_set(
    models: Sequence[ClusterModel],
    priors: Sequence[float],
    config: PredictorConfig,
    test_trips: Sequence[tuple[EncodedTrip, str]],
) -> EvalReport:
    if not test_trips:
        raise ValueError("Cannot evaluate an empty test set")
    return EvalReport.from_outcomes(
        predict_trip(models, priors, config, trip, true) for trip, true in test_trips
    )


# ---- folds -----------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class TrainedFold:
    lexicon: Lexicon
    models: tuple[ClusterModel, ...]
    train_clusters: ClusterSet


def train_fold(
    history: History, cluster_set: ClusterSet, train_ids: Iterable[str], config: PredictorConfig
) -> TrainedFold:
    """Lexicon and cluster models from the training trips only."""
    train = history.subset(train_ids)
    lexicon = build_lexicon(train)
    encoded = {t.trip_id: encode_trip(t, lexicon).states for t in train.trips}
    restricted = cluster_set.restrict(train.trip_ids)
    models = train_models(
        encoded,
        restricted,
        lexicon,
        epsilon=config.epsilon,
        pi_mode=config.pi_mode,
    )
    return TrainedFold(lexicon=lexicon, models=models, train_clusters=restricted)


def _run_fold(
    history: History,
    cluster_set: ClusterSet,
    labels: dict[str, str],
    fold: Fold,
    configs: Sequence[PredictorConfig],
) -> list[EvalReport]:
    trained = train_fold(history, cluster_set, fold.train_ids, configs[0])
    by_id = {t.trip_id: t for t in history.trips}
    tests = [(encode_trip(by_id[tid], trained.lexicon), labels[tid]) for tid in fold.test_ids]
    reports = []
    for config in configs:
        models = tuple(m.with_epsilon(config.epsilon) for m in trained.models)
        priors = make_priors(trained.train_clusters, config.prior_mode)
        reports.append(evaluate_set(models, priors, config, tests))
    return reports


async def evaluate_folds(
    history: History,
    cluster_set: ClusterSet,
    folds: Sequence[Fold],
    configs: Sequence[PredictorConfig],
) -> list[list[EvalReport]]:
    """Evaluate every fold under every config; result[f][c] is fold f, config c.

    Each fold is trained once; configs must agree on pi_mode.
    """

    if not configs:
        raise ValueError("At least one predictor config is required")
    if len({c.pi_mode for c in configs}) != 1:
        raise ValueError("All configs of one run must share pi_mode")
    cluster_set.check_partition(history)
    labels = cluster_set.cluster_of()
    results = await asyncio.gather(
        *(
            asyncio.to_thread(_run_fold, history, cluster_set, labels, fold, configs)
            for fold in folds
        )
    )
    return list(results)


def split_folds(
    trip_ids: Sequence[str], n_rounds: int = 8, split: float = 0.5, seed: int = 0
) -> list[Fold]:
    """``n_rounds`` seeded random train/test splits (not stratified)."""
    ids = np.array(sorted(trip_ids))
    n = len(ids)
    if n < 2:
        raise ValueError("Split cross-validation needs at least 2 trips")
    if not 0 < split < 1:
        raise ValueError(f"split fraction must be in (0, 1), got {split}")
    n_train = min(n - 1, max(1, round(split * n)))
    rng = np.random.default_rng(seed)
    folds = []
    for r in range(n_rounds):
        perm = rng.permutation(n)
        folds.append(
            Fold(
                index=r,
                train_ids=tuple(sorted(ids[perm[:n_train]].tolist())),
                test_ids=tuple(sorted(ids[perm[n_train:]].tolist())),
            )
        )
    return folds


def loo_folds(trip_ids: Sequence[str]) -> list[Fold]:
    ids = sorted(trip_ids)
    if len(ids) < 2:
        raise ValueError("Leave-one-out needs at least 2 trips")
    return [
        Fold(index=k, train_ids=tuple(ids[:k] + ids[k + 1 :]), test_ids=(tid,))
        for k, tid in enumerate(ids)
    ]


def incremental_folds(order: Sequence[str], ms: Optional[Iterable[int]] = None) -> list[Fold]:
    n = len(order)
    if n < 2:
        raise ValueError("The incremental experiment needs at least 2 trips")
    if len(set(order)) != n:
        raise ValueError("Trip order contains duplicates")
    sizes = list(range(1, n)) if ms is None else sorted(set(ms))
    for m in sizes:
        if not 1 <= m <= n - 1:
            raise ValueError(f"training size {m} outside [1, {n - 1}]")
    return [
        Fold(index=m, train_ids=tuple(order[:m]), test_ids=tuple(order[m:]))
        for m in sizes
    ]


# ---- protocols -------------------------------------------------------------------


def random_split_cv(
    history: History,
    cluster_set: ClusterSet,
    config: PredictorConfig,
    n_rounds: int = 8,
    split: float = 0.5,
    rng_seed: int = 0,
) -> list[EvalReport]:
    """Train on a random ``split`` share of trips, test on the rest, per round."""
    empty = [c.cluster_id for c in cluster_set.clusters if not c.trip_ids]
    if empty:
        raise ValueError(f"Cluster '{empty[0]}' has no trips")
    folds = split_folds(history.trip_ids, n_rounds, split, rng_seed)
    results = asyncio.run(evaluate_folds(history, cluster_set, folds, [config]))
    reports = [per_config[0] for per_config in results]
    for fold, report in zip(folds, reports):
        log.info(
            "split round %d: failure rate %.4f over %d trips",
            fold.index,
            report.failure_rate,
            report.n_trips,
        )
    return reports


def leave_one_out_cv(
    history: History, cluster_set: ClusterSet, config: PredictorConfig
) -> EvalReport:
    """Predict every trip from models trained on all the others."""
    folds = loo_folds(history.trip_ids)
    results = asyncio.run(evaluate_folds(history, cluster_set, folds, [config]))
    report = merge_reports(per_config[0] for per_config in results)
    log.info(
        "leave-one-out: failure rate %.4f over %d trips", report.failure_rate, report.n_trips
    )
    return report


def incremental_experiment(
    history: History,
    cluster_set: ClusterSet,
    config: PredictorConfig,
    order: Optional[Sequence[str]] = None,
    ms: Optional[Iterable[int]] = None,
) -> list[tuple[int, EvalReport]]:
    """Train on the first m trips of ``order`` and test on the remainder.

    ``order`` defaults to trip_id order, ``ms`` to every m in 1..N_H-1.
    """

    if order is None:
        order = sorted(history.trip_ids)
    if set(order) != set(history.trip_ids):
        raise ValueError("Trip order must be a permutation of the history's trips")
    folds = incremental_folds(order, ms)
    results = asyncio.run(evaluate_folds(history, cluster_set, folds, [config]))
    series = [(fold.index, per_config[0]) for fold, per_config in zip(folds, results)]
    log.info("incremental experiment: %d training sizes evaluated", len(series))
    return series


def grid_sweep(
    history: History,
    cluster_set: ClusterSet,
    alphas: Sequence[float],
    epsilons: Sequence[float],
    protocol: Literal["split", "loo"],
    *,
    clustering_mode: str,
    base: Optional[PredictorConfig] = None,
    n_rounds: int = 8,
    split: float = 0.5,
    rng_seed: int = 0,
) -> pd.DataFrame:
    """One row per (alpha, epsilon): pooled failure rate and fraction used."""
    if not alphas or not epsilons:
        raise ValueError("alpha and epsilon grids must not be empty")
    base = base or PredictorConfig()
    if protocol == "split":
        folds = split_folds(history.trip_ids, n_rounds, split, rng_seed)
    elif protocol == "loo":
        folds = loo_folds(history.trip_ids)
    else:
        raise ValueError(f"Sweeps support the split and loo protocols, not '{protocol}'")
    configs = [
        base.model_copy(update={"alpha": a, "epsilon": e}) for a in alphas for e in epsilons
    ]
    results = asyncio.run(evaluate_folds(history, cluster_set, folds, configs))
    rows = []
    for c, config in enumerate(configs):
        report = merge_reports(per_config[c] for per_config in results)
        rows.append(
            {
                "alpha": config.alpha,
                "epsilon": config.epsilon,
                "clustering_mode": clustering_mode,
                "protocol": protocol,
                "failure_rate": report.failure_rate,
                "mean_fraction_used": report.mean_fraction_used,
                "n_trips": report.n_trips,
            }
        )
    log.info(
        "sweep (%s, %s): %d grid points over %d folds",
        clustering_mode,
        protocol,
        len(rows),
        len(folds),
    )
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


# ---- tables ----------------------------------------------------------------------


def summary_frame(
    report: EvalReport, config: PredictorConfig, clustering_mode: str, protocol: str
) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "alpha": config.alpha,
                "epsilon": config.epsilon,
                "clustering_mode": clustering_mode,
                "protocol": protocol,
                "failure_rate": report.failure_rate,
                "mean_fraction_used": report.mean_fraction_used,
                "n_trips": report.n_trips,
            }
        ],
        columns=SWEEP_COLUMNS,
    )


def incremental_frame(series: Sequence[tuple[int, EvalReport]]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"m": m, "failure_rate": r.failure_rate, "mean_fraction_used": r.mean_fraction_used}
            for m, r in series
        ],
        columns=INCREMENTAL_COLUMNS,
    )


def outcomes_frame(outcomes: Iterable[EvalOutcome]) -> pd.DataFrame:
    rows = list(outcomes)
    return pd.DataFrame(
        {
            "trip_id": [o.trip_id for o in rows],
            "true_cluster": [o.true_cluster for o in rows],
            "predicted_cluster": [o.predicted_cluster for o in rows],
            "segments_at_decision": pd.array(
                [o.segments_at_decision for o in rows], dtype="Int64"
            ),
            "trip_length": [o.trip_length for o in rows],
            "fraction_used": [o.fraction_used for o in rows],
        },
        columns=OUTCOME_COLUMNS,
    )


def write_csv(frame: pd.DataFrame, stream: TextIO) -> None:
    """CSV with a header row, LF line endings and empty cells for absent values."""
    frame.to_csv(stream, index=False, lineterminator="\n", na_rep="")
