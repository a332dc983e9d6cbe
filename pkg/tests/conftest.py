import importlib
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from synthetic_gen import GenConfig, generate_corpus  # noqa: E402
from trip_data import Cluster, ClusterSet, History, Trip  # noqa: E402


def make_trip(trip_id, segments, **labels):
    return Trip(
        trip_id=trip_id,
        timestamps=tuple(float(10 * k) for k in range(len(segments))),
        segments=tuple(segments),
        **labels,
    )


def make_clusters(groups):
    return ClusterSet(
        clusters=tuple(Cluster(cluster_id=cid, trip_ids=tuple(ids)) for cid, ids in groups.items())
    )



def pytest_addoption(parser):
    parser.addoption(
        "--calibrate",
        action="store_true",
        default=False,
        help="record the pinned acceptance values instead of checking them",
    )

@pytest.fixture
def cfg(monkeypatch):
    for name in (
        "ROUTEPREDICT_ALPHA",
        "ROUTEPREDICT_EPSILON",
        "ROUTEPREDICT_PRIOR",
        "ROUTEPREDICT_PI",
        "ROUTEPREDICT_CLUSTERING",
        "ROUTEPREDICT_ROUTE_THRESHOLD",
        "ROUTEPREDICT_SEED",
    ):
        monkeypatch.delenv(name, raising=False)
    import config

    importlib.reload(config)
    yield config
    monkeypatch.undo()
    config.reload_defaults()


@pytest.fixture
def two_routes():
    """Two disjoint eight-segment routes, two identical trips each."""
    east = [f"e{k}" for k in range(8)]
    west = [f"w{k}" for k in range(8)]
    history = History(
        trips=(
            make_trip("t1", east),
            make_trip("t2", east),
            make_trip("t3", west),
            make_trip("t4", west),
        )
    )
    clusters = make_clusters({"east": ["t1", "t2"], "west": ["t3", "t4"]})
    return history, clusters


@pytest.fixture(scope="session")
def small_corpus():
    config = GenConfig(
        n_pois=5,
        n_od_pairs=6,
        trips_total=80,
        grid_width=12,
        grid_height=12,
        rng_seed=3,
    )
    return generate_corpus(config)


@pytest.fixture(scope="session")
def noiseless_corpus():
    config = GenConfig(
        n_pois=5,
        n_od_pairs=6,
        trips_total=80,
        grid_width=12,
        grid_height=12,
        p_drop=0.0,
        p_spurious=0.0,
        rng_seed=5,
    )
    return generate_corpus(config)
