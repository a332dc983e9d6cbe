"""Streaming cluster prediction for one ongoing trip.

A :class:`PredictionSession` is started on the first segment, fed one encoded
segment at a time, and reports a decision as soon as a posterior exceeds
``1 - alpha``.
"""

from __future__ import annotations

import logging
import math
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from markov_model import NEG_INF, ClusterModel, PiMode, SmoothingParams
from trip_data import ClusterSet

log = logging.getLogger("routepredict")

PriorMode = Literal["uniform", "proportional"]


class PredictorConfig(BaseModel):
    """Stopping threshold, prior choice and smoothing for prediction."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.1, gt=0, lt=1)
    prior_mode: PriorMode = "uniform"
    epsilon: float = Field(default=1e-6, gt=0)
    pi_mode: PiMode = "global_uniform"


class PosteriorUndefinedError(RuntimeError):
    """Every cluster has zero probability for the segments seen so far."""


class Decision(NamedTuple):
    cluster_id: str
    segments_seen: int


def make_priors(cluster_set: ClusterSet, mode: PriorMode = "uniform") -> np.ndarray:
    """Prior P(C_k) per cluster, in ``cluster_set`` order."""
    return priors_from_sizes(cluster_set.sizes, mode)


def priors_from_sizes(cluster_sizes: Sequence[int], mode: PriorMode = "uniform") -> np.ndarray:
    """Uniform priors, or priors proportional to the trips in each cluster."""
    n_c = len(cluster_sizes)
    if n_c < 1:
        raise ValueError("At least one cluster is required")
    if mode == "uniform":
        return np.full(n_c, 1.0 / n_c)
    if mode == "proportional":
        sizes = np.asarray(cluster_sizes, dtype=float)
        total = sizes.sum()
        if total == 0:
            raise ValueError("Proportional priors need at least one trip")
        return sizes / total
    raise ValueError(f"Unknown prior mode '{mode}'")


class PredictionSession:
    """Running posterior state of one trip. Not safe for shared mutation."""

    def __init__(
        self,
        models: Sequence[ClusterModel],
        priors: Sequence[float],
        config: PredictorConfig,
        first_state: int,
    ) -> None:
        if not models:
            raise ValueError("At least one cluster model is required")
        if len(priors) != len(models):
            raise ValueError(f"{len(priors)} priors for {len(models)} models")
        n = models[0].n
        if any(m.n != n for m in models):
            raise ValueError("All cluster models must share one lexicon")
        self.models: tuple[ClusterModel, ...] = tuple(
            m.with_epsilon(config.epsilon) for m in models
        )
        self.config = config
        self.cluster_ids: tuple[str, ...] = tuple(m.cluster_id for m in self.models)
        self.u = n
        self._log_bar_eps = math.log(SmoothingParams(config.epsilon, n).bar_epsilon)
        with np.errstate(divide="ignore"):
            self.log_prior = np.log(np.asarray(priors, dtype=float))
        # Terms common to every cluster (unseen-state steps) are kept apart so
        # they never touch the posterior.
        self._shared = 0.0
        if first_state == self.u:
            self._log_lik = np.zeros(len(self.models))
            self._shared = self._log_bar_eps
        else:
            self._log_lik = np.array([m.log_initial(first_state) for m in self.models])
        self.segments_seen = 1
        self.last_state = first_state
        self.decided: Optional[str] = None
        self.decided_at: Optional[int] = None
        self.posterior = self._normalise()
        self._check_decision()

    @property
    def log_lik(self) -> np.ndarray:
        """Running log-likelihood per cluster."""
        return self._log_lik + self._shared

    @property
    def alpha(self) -> float:
        return self.config.alpha

    def _normalise(self) -> np.ndarray:
        weights = self._log_lik + self.log_prior
        if not np.any(np.isfinite(weights)):
            raise PosteriorUndefinedError(
                "Posterior undefined: every cluster has zero likelihood or prior"
            )
        return np.exp(weights - logsumexp(weights))

    def _check_decision(self) -> None:
        k = int(np.argmax(self.posterior))
        if self.posterior[k] > 1 - self.config.alpha:
            self.decided = self.cluster_ids[k]
            self.decided_at = self.segments_seen
            log.debug(
                "decided %s after %d segments (p=%.6f)",
                self.decided,
                self.segments_seen,
                self.posterior[k],
            )

    def observe_segment(self, new_state: int) -> "PredictionSession":
        """Fold in the next segment and re-check the stopping criterion."""
        if self.decided is not None:
            raise RuntimeError(
                f"Session already decided on '{self.decided}'; stop observing"
            )
        if not 0 <= new_state <= self.u:
            raise IndexError(f"state {new_state} outside [0, {self.u}]")
        frm, self.last_state = self.last_state, new_state
        self.segments_seen += 1
        if frm == self.u or new_state == self.u:
            self._shared += self._log_bar_eps
            return self
        self._log_lik = self._log_lik + np.array(
            [m.log_transition(frm, new_state) for m in self.models]
        )
        self.posterior = self._normalise()
        self._check_decision()
        return self

    def decide(self) -> Optional[str]:
        """Cluster whose posterior exceeds 1 - alpha (lowest index on ties)."""
        k = int(np.argmax(self.posterior))
        if self.posterior[k] > 1 - self.config.alpha:
            return self.cluster_ids[k]
        return None

    def candidates(self) -> tuple[str, ...]:
        """Fewest clusters, most probable first, holding at least 1 - alpha."""
        order = sorted(range(len(self.posterior)), key=lambda k: (-self.posterior[k], k))
        out: list[str] = []
        mass = 0.0
        for k in order:
            out.append(self.cluster_ids[k])
            mass += float(self.posterior[k])
            if mass >= 1 - self.config.alpha:
                break
        return tuple(out)

    def posteriors(self) -> dict[str, float]:
        return {cid: float(p) for cid, p in zip(self.cluster_ids, self.posterior)}

    def finish(self) -> Optional[Decision]:
        """The decision and when it was made, or None if never decided."""
        if self.decided is None or self.decided_at is None:
            return None
        return Decision(self.decided, self.decided_at)


def new_session(
    models: Sequence[ClusterModel],
    priors: Sequence[float],
    config: PredictorConfig,
    first_state: int,
) -> PredictionSession:
    return PredictionSession(models, priors, config, first_state)


def batch_posterior(priors: Sequence[float], log_liks: Sequence[float]) -> np.ndarray:
    """Posterior from complete per-cluster log-likelihoods (Bayes' rule)."""
    with np.errstate(divide="ignore"):
        weights = np.asarray(log_liks, dtype=float) + np.log(np.asarray(priors, dtype=float))
    if not np.any(weights > NEG_INF):
        raise PosteriorUndefinedError("Posterior undefined: every weight is zero")
    return np.exp(weights - logsumexp(weights))
