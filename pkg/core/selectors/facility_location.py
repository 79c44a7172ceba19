"""Facility-location subset selection with naive and lazy greedy maximisation."""
import heapq
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from core.selectors.base import (
    SelectionContext,
    SelectionError,
    SubsetSelection,
    SubsetSelector,
    class_budgets,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric Gaussian similarities in (0, 1] with a unit diagonal."""
    values: np.ndarray
    sigma: float
    metric: str = "euclidean"

    @property
    def n(self) -> int:
        return self.values.shape[0]


def similarity_matrix(features: np.ndarray, metric: str = "euclidean") -> SimilarityMatrix:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise SelectionError("similarity_matrix needs a nonempty 2-D feature matrix")
    distances = pdist(features, metric=metric)
    sigma = float(np.median(distances)) if distances.size else 0.0
    if sigma <= 0:
        sigma = 1.0
    sq = squareform(distances) ** 2
    values = np.exp(-sq / (2.0 * sigma**2))
    values = np.maximum(values, np.finfo(np.float64).tiny)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(values, sigma, metric)


def _values(sim: Union[SimilarityMatrix, np.ndarray]) -> np.ndarray:
    return sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)


def facility_location_value(S: Sequence[int], sim: Union[SimilarityMatrix, np.ndarray]) -> float:
    """sum_i max_{j in S} s_ij, with the empty set worth 0."""
    values = _values(sim)
    S = np.asarray(list(S), dtype=np.int64)
    if S.size == 0:
        return 0.0
    return float(values[:, S].max(axis=1).sum())


class FacilityLocationState:
    """Incremental coverage vector max_{j in S} s_ij for marginal-gain queries."""

    def __init__(self, sim: Union[SimilarityMatrix, np.ndarray]):
        self.values = _values(sim)
        self.coverage = np.zeros(self.values.shape[0])
        self.chosen: List[int] = []

    def gains(self, candidates: np.ndarray) -> np.ndarray:
        rows = self.values[np.asarray(candidates, dtype=np.int64)]
        return (np.maximum(rows, self.coverage) - self.coverage).sum(axis=1)

    def gain(self, e: int) -> float:
        return float(self.gains(np.array([e]))[0])

    def add(self, e: int) -> None:
        self.coverage = np.maximum(self.coverage, self.values[e])
        self.chosen.append(int(e))


def _naive_greedy(state: FacilityLocationState, k: int) -> List[int]:
    n = state.values.shape[0]
    available = np.ones(n, dtype=bool)
    for _ in range(k):
        candidates = np.flatnonzero(available)
        gains = state.gains(candidates)
        e = int(candidates[int(np.argmax(gains))])
        state.add(e)
        available[e] = False
    return state.chosen


def _lazy_greedy(state: FacilityLocationState, k: int) -> List[int]:
    n = state.values.shape[0]
    initial = state.gains(np.arange(n))
    # min-heap on (-gain, index): largest gain first, lowest index on ties
    heap = [(-float(g), e) for e, g in enumerate(initial)]
    heapq.heapify(heap)
    evaluations = n
    while len(state.chosen) < k and heap:
        _, e = heapq.heappop(heap)
        fresh = state.gain(e)
        evaluations += 1
        if not heap or (-fresh, e) <= heap[0]:
            state.add(e)
        else:
            heapq.heappush(heap, (-fresh, e))
    logger.debug("lazy greedy: %d gain evaluations for k=%d, n=%d", evaluations, k, n)
    return state.chosen


def fl_greedy_sequence(sim: Union[SimilarityMatrix, np.ndarray], k: int,
                       mode: str = "lazy") -> List[int]:
    """Indices in the order the greedy adds them."""
    state = FacilityLocationState(sim)
    n = state.values.shape[0]
    if not 0 <= k <= n:
        raise SelectionError(f"cannot select {k} of {n} points")
    if mode == "naive":
        return _naive_greedy(state, k)
    if mode == "lazy":
        return _lazy_greedy(state, k)
    raise SelectionError(f"unknown greedy mode {mode!r}; expected 'naive' or 'lazy'")


def select_fl_greedy(sim: Union[SimilarityMatrix, np.ndarray], k: int, mode: str = "lazy",
                     per_class: bool = False,
                     labels: Optional[np.ndarray] = None) -> SubsetSelection:
    values = _values(sim)
    n = values.shape[0]
    if k > n:
        raise SelectionError(f"cannot select {k} of {n} points")
    if not per_class:
        order = fl_greedy_sequence(values, k, mode)
        return SubsetSelection(np.array(order, dtype=np.int64), budget=k, info={"order": order})

    if labels is None:
        raise SelectionError("per-class facility location needs labels")
    labels = np.asarray(labels)
    order: List[int] = []
    for c, budget in sorted(class_budgets(labels, k).items()):
        members = np.flatnonzero(labels == c)
        local = fl_greedy_sequence(values[np.ix_(members, members)], budget, mode)
        order.extend(int(members[i]) for i in local)
    return SubsetSelection(np.array(order, dtype=np.int64), budget=k, info={"order": order})


class FacilityLocationSelector(SubsetSelector):
    """Representative subsets over the raw training features.

    The similarity matrix is computed once and reused across refreshes.
    """

    name = "fl"

    def __init__(self, mode: str = "lazy", per_class: bool = True):
        self.mode = mode
        self.per_class = per_class
        self._sim: Optional[SimilarityMatrix] = None

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        self._check_budget(ctx)
        if self._sim is None or self._sim.n != ctx.n:
            self._sim = similarity_matrix(ctx.X_train)
        return select_fl_greedy(self._sim, ctx.k, self.mode, self.per_class, ctx.y_train)
