from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

from app.services.baselines.models import EvictionPolicy, PolicyKind
from app.services.tensor_core import Rng


def h2o_scores(attn_weights_history: Sequence[np.ndarray], length: int | None = None) -> np.ndarray:
    """
    Accumulated attention mass per key position.

    Each history item is a [n_queries, n_keys] probability block; blocks may
    cover a growing prefix and are summed over queries into positions 0..n_keys-1.
    """
    if length is None:
        length = max((w.shape[-1] for w in attn_weights_history), default=0)
    scores = np.zeros(length, dtype=np.float64)
    for weights in attn_weights_history:
        weights = np.asarray(weights, dtype=np.float64)
        scores[: weights.shape[-1]] += weights.reshape(-1, weights.shape[-1]).sum(axis=0)
    return scores


def h2o_keep(scores: np.ndarray, candidates: np.ndarray, budget: int) -> np.ndarray:
    """Top-`budget` candidates by score, ties toward the lower position; returned sorted."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if budget <= 0 or candidates.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((candidates, -scores[candidates]))
    return np.sort(candidates[order[:budget]])


class RetentionPolicy(ABC):
    """Decides which positions outside the window and sinks stay in a stream's cache."""

    def __init__(self, config: EvictionPolicy):
        self.config = config

    def protected(self, chunk_end: int) -> np.ndarray:
        positions = np.arange(chunk_end)
        return (positions >= chunk_end - self.config.window) | (positions < self.config.n_sinks)

    def select_retained(self, retained: np.ndarray, chunk_end: int, scores: np.ndarray, stream: tuple[int, int]) -> np.ndarray:
        """New retained mask over positions [0, chunk_end); never resurrects an evicted position."""
        protected = self.protected(chunk_end)
        keep = retained[:chunk_end] & protected
        eligible = ~protected
        keep |= self._retain_eligible(retained[:chunk_end] & eligible, eligible, scores[:chunk_end], stream)
        return keep

    @abstractmethod
    def _retain_eligible(
        self, alive: np.ndarray, eligible: np.ndarray, scores: np.ndarray, stream: tuple[int, int]
    ) -> np.ndarray: ...


class KeepAllPolicy(RetentionPolicy):
    def protected(self, chunk_end: int) -> np.ndarray:
        return np.ones(chunk_end, dtype=bool)

    def _retain_eligible(self, alive, eligible, scores, stream):
        return alive


class StreamingLLMPolicy(RetentionPolicy):
    """Sinks plus window; everything in between is dropped."""

    def _retain_eligible(self, alive, eligible, scores, stream):
        return np.zeros_like(alive)


class H2OPolicy(RetentionPolicy):
    """Heavy hitters: a budget of the highest accumulated-attention positions outside sinks and window."""

    def _retain_eligible(self, alive, eligible, scores, stream):
        budget = int(np.floor(self.config.budget_fraction * int(eligible.sum()) + 0.5))
        keep = np.zeros_like(alive)
        keep[h2o_keep(scores, np.flatnonzero(alive), budget)] = True
        return keep


class RandomPolicy(RetentionPolicy):
    """Keeps each position with probability keep_fraction, decided once when it leaves the window."""

    def __init__(self, config: EvictionPolicy):
        super().__init__(config)
        self.rng = Rng(config.seed)
        self._decided: dict[tuple[int, int], int] = {}

    def _retain_eligible(self, alive, eligible, scores, stream):
        keep = alive.copy()
        candidates = np.flatnonzero(eligible)
        start = self._decided.get(stream, 0)
        fresh = candidates[candidates >= start]
        if fresh.size:
            keep[fresh] &= self.rng.bernoulli(np.full(fresh.size, self.config.keep_fraction))
            self._decided[stream] = int(fresh[-1]) + 1
        return keep


def make_policy(config: EvictionPolicy) -> RetentionPolicy:
    match config.kind:
        case PolicyKind.STREAMING_LLM:
            return StreamingLLMPolicy(config)
        case PolicyKind.H2O:
            return H2OPolicy(config)
        case PolicyKind.RANDOM:
            return RandomPolicy(config)
    return KeepAllPolicy(config)
