import math

import numpy as np
import pytest

from conftest import make_clusters
from markov_model import train_counts, trip_log_likelihood
from predictor import (
    Decision,
    PredictorConfig,
    batch_posterior,
    make_priors,
    new_session,
    priors_from_sizes,
)
from trip_data import Lexicon


def lexicon_of(n):
    return Lexicon.from_segments(f"s{k}" for k in range(n))


def random_walk(rng, n, length, allow_unseen=False):
    top = n + 1 if allow_unseen else n
    states = [int(rng.integers(top))]
    while len(states) < length:
        nxt = int(rng.integers(top))
        if nxt != states[-1]:
            states.append(nxt)
    return states


def random_models(rng, n, n_clusters, epsilon, pi_mode="global_uniform"):
    lexicon = lexicon_of(n)
    return tuple(
        train_counts(
            [random_walk(rng, n, int(rng.integers(2, 8))) for _ in range(int(rng.integers(1, 5)))],
            lexicon,
            cluster_id=f"c{k}",
            epsilon=epsilon,
            pi_mode=pi_mode,
        )
        for k in range(n_clusters)
    )


def test_uniform_priors():
    clusters = make_clusters({f"c{k}": [f"t{k}"] for k in range(4)})
    assert make_priors(clusters, "uniform") == pytest.approx([0.25] * 4)


def test_proportional_priors():
    clusters = make_clusters({"a": ["t1", "t2", "t3"], "b": ["t4"]})
    assert make_priors(clusters, "proportional") == pytest.approx([0.75, 0.25])


def test_priors_need_clusters():
    with pytest.raises(ValueError):
        priors_from_sizes([], "uniform")
    with pytest.raises(ValueError):
        priors_from_sizes([0, 0], "proportional")


def test_initial_posterior_equal_models():
    lexicon = lexicon_of(4)
    models = [train_counts([], lexicon, cluster_id=c) for c in ("a", "b")]
    session = new_session(models, [0.5, 0.5], PredictorConfig(), 0)
    assert session.posterior == pytest.approx([0.5, 0.5])
    assert session.decided is None
    assert session.segments_seen == 1


def test_initial_posterior_follows_priors():
    lexicon = lexicon_of(4)
    models = [train_counts([], lexicon, cluster_id=c) for c in ("a", "b", "c")]
    session = new_session(models, [0.5, 0.25, 0.25], PredictorConfig(alpha=0.4), 2)
    assert session.posterior == pytest.approx([0.5, 0.25, 0.25])


def test_initial_ml_decides_immediately():
    lexicon = lexicon_of(2)
    config = PredictorConfig(pi_mode="ml")
    models = [
        train_counts([[0, 1]], lexicon, cluster_id="c1", pi_mode="ml"),
        train_counts([[1, 0]], lexicon, cluster_id="c2", pi_mode="ml"),
    ]
    session = new_session(models, [0.5, 0.5], config, 0)
    assert session.posterior == pytest.approx([1.0, 0.0])
    assert session.finish() == Decision("c1", 1)


def test_undefined_initial_posterior():
    lexicon = lexicon_of(3)
    config = PredictorConfig(pi_mode="ml")
    models = [
        train_counts([[0, 1]], lexicon, cluster_id="c1", pi_mode="ml"),
        train_counts([[1, 0]], lexicon, cluster_id="c2", pi_mode="ml"),
    ]
    with pytest.raises(RuntimeError) as exc:
        new_session(models, [0.5, 0.5], config, 2)
    assert "Posterior undefined" in str(exc.value)


def forked_models(epsilon=1e-6):
    lexicon = lexicon_of(4)
    return [
        train_counts([[0, 1, 2]], lexicon, cluster_id="c1", epsilon=epsilon),
        train_counts([[0, 1, 3]], lexicon, cluster_id="c2", epsilon=epsilon),
    ]


def test_observe_until_decision():
    config = PredictorConfig(alpha=0.001)
    session = new_session(forked_models(), [0.5, 0.5], config, 0)
    session.observe_segment(1)
    assert session.posterior == pytest.approx([0.5, 0.5])
    assert session.decided is None
    session.observe_segment(2)
    assert session.posterior[0] > 0.999
    assert session.decide() == "c1"
    assert session.finish() == Decision("c1", 3)
    with pytest.raises(RuntimeError) as exc:
        session.observe_segment(1)
    assert "already decided" in str(exc.value)


def test_observe_out_of_range():
    session = new_session(forked_models(), [0.5, 0.5], PredictorConfig(), 0)
    with pytest.raises(IndexError):
        session.observe_segment(5)


def test_unseen_segment_leaves_posterior_unchanged():
    session = new_session(forked_models(), [0.3, 0.7], PredictorConfig(alpha=0.001), 0)
    before = session.posterior.copy()
    session.observe_segment(4)
    assert np.array_equal(session.posterior, before)
    session.observe_segment(1)
    after = session.posterior.copy()
    session.observe_segment(4)
    assert np.array_equal(session.posterior, after)
    assert session.segments_seen == 4


def test_first_segment_unseen():
    session = new_session(forked_models(), [0.3, 0.7], PredictorConfig(), 4)
    assert session.posterior == pytest.approx([0.3, 0.7])
    assert np.all(np.isfinite(session.log_lik))


def test_tie_goes_to_lowest_index():
    lexicon = lexicon_of(4)
    models = [train_counts([], lexicon, cluster_id=c) for c in ("a", "b")]
    session = new_session(models, [0.5, 0.5], PredictorConfig(alpha=0.6), 0)
    assert session.decide() == "a"
    assert session.finish() == Decision("a", 1)


def test_no_decision_at_threshold():
    lexicon = lexicon_of(4)
    models = [train_counts([], lexicon, cluster_id=c) for c in ("a", "b")]
    session = new_session(models, [0.5, 0.5], PredictorConfig(alpha=0.45), 0)
    assert session.decide() is None
    assert session.finish() is None


@pytest.mark.parametrize("posterior, expected", [((0.95, 0.05), "c1"), ((0.85, 0.15), None)])
def test_decide_threshold(posterior, expected):
    session = new_session(forked_models(), [0.5, 0.5], PredictorConfig(alpha=0.1), 0)
    session.posterior = np.array(posterior)
    assert session.decide() == expected


def test_candidates():
    session = new_session(forked_models(), [0.5, 0.5], PredictorConfig(alpha=0.1), 0)
    assert session.candidates() == ("c1", "c2")
    session.observe_segment(1)
    session.observe_segment(3)
    assert session.candidates() == ("c2",)
    assert session.posteriors()["c2"] > 0.9


def test_streaming_matches_batch():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(4, 10))
        epsilon = float(rng.choice([1e-7, 1e-3, 0.1]))
        models = random_models(rng, n, int(rng.integers(2, 5)), epsilon)
        priors = rng.dirichlet(np.ones(len(models)))
        trip = random_walk(rng, n, int(rng.integers(1, 12)), allow_unseen=True)
        config = PredictorConfig(alpha=1e-9, epsilon=epsilon)
        session = new_session(models, priors, config, trip[0])
        for t in range(1, len(trip) + 1):
            if t > 1:
                if session.decided is not None:
                    break
                session.observe_segment(trip[t - 1])
            expected = batch_posterior(
                priors, [trip_log_likelihood(m, trip[:t]) for m in models]
            )
            assert np.allclose(session.posterior, expected, rtol=0, atol=1e-9)
            assert session.posterior.sum() == pytest.approx(1.0, abs=1e-9)


def test_prior_scaling_invariance():
    rng = np.random.default_rng(5)
    models = random_models(rng, 6, 3, 1e-3)
    priors = np.array([0.2, 0.3, 0.5])
    trip = random_walk(rng, 6, 6)
    config = PredictorConfig(alpha=1e-9, epsilon=1e-3)
    a = new_session(models, priors, config, trip[0])
    b = new_session(models, priors * 7, config, trip[0])
    for state in trip[1:]:
        if a.decided is not None:
            break
        a.observe_segment(state)
        b.observe_segment(state)
        assert np.allclose(a.posterior, b.posterior, rtol=0, atol=1e-12)


def test_larger_alpha_decides_no_later():
    rng = np.random.default_rng(9)
    for _ in range(100):
        models = random_models(rng, 8, 3, 1e-3)
        trip = random_walk(rng, 8, 10)

        def decided_at(alpha):
            session = new_session(
                models, [1 / 3] * 3, PredictorConfig(alpha=alpha, epsilon=1e-3), trip[0]
            )
            for state in trip[1:]:
                if session.decided is not None:
                    break
                session.observe_segment(state)
            return session.decided_at if session.decided_at is not None else math.inf

        assert decided_at(0.3) <= decided_at(0.01)


def test_unseen_neutrality_random():
    rng = np.random.default_rng(21)
    for _ in range(200):
        n = 6
        models = random_models(rng, n, 3, 1e-4)
        trip = random_walk(rng, n, 10, allow_unseen=True)
        session = new_session(models, [1 / 3] * 3, PredictorConfig(alpha=1e-9, epsilon=1e-4), trip[0])
        for state in trip[1:]:
            if session.decided is not None:
                break
            before = session.posterior.copy()
            prev = session.last_state
            session.observe_segment(state)
            if n in (prev, state):
                assert np.array_equal(session.posterior, before)


def test_batch_posterior_undefined():
    with pytest.raises(RuntimeError):
        batch_posterior([0.5, 0.5], [float("-inf"), float("-inf")])
