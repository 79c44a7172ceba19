"""Entropy-histogram sampling from a small base model's predictive distribution."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import entropy

from core.nn.ndgrad import MLP, MLPGraph
from core.selectors.base import (
    SeedLike,
    SelectionContext,
    SelectionError,
    SubsetSelection,
    SubsetSelector,
    as_rng,
)
from core.utils.data_utils import BatchStream

logger = logging.getLogger(__name__)


@dataclass
class EntropyHistogram:
    """Equal-width histogram over per-point entropies with tail-favouring sampling probabilities.

    A point in bin b is drawn with probability proportional to
    (1 + |b - median_bin|) / |h_b|, so each bin's total mass grows with its
    distance from the bin holding the median score.
    """
    scores: np.ndarray
    edges: np.ndarray
    heights: np.ndarray
    point_bins: np.ndarray
    probabilities: np.ndarray

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def degenerate(self) -> bool:
        return len(self.heights) == 1


def entropy_scores(base_model, X: np.ndarray) -> np.ndarray:
    """Predictive entropy in nats, within [0, ln C]."""
    probs = base_model.predict_proba(X)
    scores = entropy(probs, axis=1)
    return np.clip(scores, 0.0, np.log(probs.shape[1]))


def entropy_histogram(scores: np.ndarray, bins: int = 20) -> EntropyHistogram:
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if n == 0:
        raise SelectionError("cannot build a histogram over zero points")
    if bins < 1:
        raise SelectionError("histogram needs at least one bin")
    lo, hi = float(scores.min()), float(scores.max())
    if bins == 1 or hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return EntropyHistogram(
            scores=scores,
            edges=np.array([lo, hi]),
            heights=np.array([n]),
            point_bins=np.zeros(n, dtype=np.int64),
            probabilities=np.full(n, 1.0 / n),
        )

    edges = np.linspace(lo, hi, bins + 1)
    point_bins = np.searchsorted(edges[1:-1], scores, side="right")
    heights = np.bincount(point_bins, minlength=bins)
    median_bin = int(np.searchsorted(edges[1:-1], np.median(scores), side="right"))
    weights = 1.0 + np.abs(np.arange(bins) - median_bin)
    raw = weights[point_bins] / heights[point_bins]
    return EntropyHistogram(
        scores=scores,
        edges=edges,
        heights=heights,
        point_bins=point_bins,
        probabilities=raw / raw.sum(),
    )


def entropy_select(hist: EntropyHistogram, k: int, seed: SeedLike) -> SubsetSelection:
    if k > hist.n:
        raise SelectionError(f"cannot select {k} of {hist.n} points")
    rng = as_rng(seed)
    if hist.degenerate:
        chosen = rng.choice(hist.n, size=k, replace=False)
    else:
        chosen = rng.choice(hist.n, size=k, replace=False, p=hist.probabilities)
    return SubsetSelection(chosen, budget=k)


def train_base_model(X: np.ndarray, y: np.ndarray, classes: int, epochs: int,
                     rng: np.random.Generator, hidden: int = 16, batch_size: int = 64,
                     lr: float = 0.05, momentum: float = 0.9) -> MLP:
    graph = MLPGraph((X.shape[1], hidden, classes))
    model = MLP(graph, graph.init_params(rng))
    stream = BatchStream(np.arange(len(y)), batch_size, rng)
    for _ in range(epochs * stream.steps_per_epoch):
        idx = stream.next_batch()
        model.train_step(X[idx], y[idx], lr, momentum)
    return model


class EntropySelector(SubsetSelector):
    """Samples from a fixed entropy histogram; the base model is trained once."""

    name = "entropy"

    def __init__(self, bins: int = 20, base_epochs: int = 10):
        self.bins = bins
        self.base_epochs = base_epochs
        self.histogram: Optional[EntropyHistogram] = None

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        self._check_budget(ctx)
        overhead = 0.0
        if self.histogram is None or self.histogram.n != ctx.n:
            base = train_base_model(ctx.X_train, ctx.y_train, ctx.classes, self.base_epochs, ctx.rng)
            self.histogram = entropy_histogram(entropy_scores(base, ctx.X_train), self.bins)
            overhead = float(self.base_epochs * ctx.n)
            logger.info("entropy base model trained for %d epochs on %d points",
                        self.base_epochs, ctx.n)
        selection = entropy_select(self.histogram, ctx.k, ctx.rng)
        selection.overhead = overhead
        return selection
