"""Subset selection: shared types and the baseline selectors."""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Union

import numpy as np

from core.nn.ndgrad import LastLayerModel

# cost, in example-gradient units, of one forward pass plus an outer product
FORWARD_COST = 1.0 / 3.0

SeedLike = Union[int, np.random.Generator]


class SelectionError(ValueError):
    """Invalid selection request or selection result."""
    pass


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class SubsetSelection:
    """Chosen training indices with optional nonnegative weights.

    Indices are stored sorted; weights are permuted along with them.
    ``overhead`` is the selector cost spent producing this selection.
    """
    indices: np.ndarray
    budget: int
    weights: Optional[np.ndarray] = None
    overhead: float = 0.0
    info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        order = np.argsort(indices, kind="stable")
        indices = indices[order]
        if len(np.unique(indices)) != len(indices):
            raise SelectionError("selection contains duplicate indices")
        if len(indices) > self.budget:
            raise SelectionError(f"selection of size {len(indices)} exceeds budget {self.budget}")
        if len(indices) and indices[0] < 0:
            raise SelectionError("selection contains negative indices")
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if len(weights) != len(indices):
                raise SelectionError("one weight per selected index is required")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise SelectionError("weights must be finite and nonnegative")
            self.weights = weights[order]
        self.indices = indices

    def __len__(self) -> int:
        return len(self.indices)

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.indices))
        return self.weights

    def to_record(self) -> Dict[str, Any]:
        return {
            "budget": int(self.budget),
            "indices": self.indices.tolist(),
            "weights": None if self.weights is None else self.weights.tolist(),
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "SubsetSelection":
        return cls(
            indices=np.asarray(record["indices"], dtype=np.int64),
            budget=int(record["budget"]),
            weights=None if record.get("weights") is None else np.asarray(record["weights"]),
        )


@dataclass
class SelectionContext:
    """Everything a selector may look at when choosing a subset of the train set."""
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    k: int
    classes: int
    rng: np.random.Generator
    model: Optional[LastLayerModel] = None

    @property
    def n(self) -> int:
        return len(self.y_train)


def class_budgets(labels: np.ndarray, k: int) -> Dict[int, int]:
    """Proportional per-class budgets floor(k * n_c / n); the remainder goes to the largest classes."""
    labels = np.asarray(labels)
    n = len(labels)
    if not 0 <= k <= n:
        raise SelectionError(f"budget k={k} must lie in [0, {n}]")
    classes, counts = np.unique(labels, return_counts=True)
    budgets = {int(c): int(k * cnt // n) for c, cnt in zip(classes, counts)}
    remainder = k - sum(budgets.values())
    # largest classes first, ties by class id
    for idx in np.lexsort((classes, -counts))[:remainder]:
        budgets[int(classes[idx])] += 1
    return budgets


def select_random(n: int, k: int, seed: SeedLike) -> SubsetSelection:
    if k > n:
        raise SelectionError(f"cannot select {k} of {n} points")
    if k < 0:
        raise SelectionError("budget must be nonnegative")
    rng = as_rng(seed)
    return SubsetSelection(rng.choice(n, size=k, replace=False), budget=k)


class SubsetSelector(ABC):
    """Abstract base class for subset selectors."""

    name = "abstract"

    @abstractmethod
    def select(self, ctx: SelectionContext) -> SubsetSelection:
        """Choose at most ``ctx.k`` training indices."""
        pass

    def _check_budget(self, ctx: SelectionContext) -> None:
        if not 0 <= ctx.k <= ctx.n:
            raise SelectionError(f"cannot select {ctx.k} of {ctx.n} points")


class FullSelector(SubsetSelector):
    """The whole training set, in index order."""

    name = "full"

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        return SubsetSelection(np.arange(ctx.n), budget=ctx.n)


class RandomSelector(SubsetSelector):
    name = "random"

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        self._check_budget(ctx)
        return select_random(ctx.n, ctx.k, ctx.rng)
