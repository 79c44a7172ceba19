"""GLISTER: greedy subset selection by one-step-ahead validation loss.

Gains are Taylor approximations on the classifier head. After every round
the head is re-linearised at theta - eta * sum_{j in S} g_j and the
validation gradient is recomputed from cached penultimate features.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from core.nn.ndgrad import LastLayerModel, logit_gradients, per_example_last_layer_grads
from core.selectors.base import (
    FORWARD_COST,
    SelectionContext,
    SelectionError,
    SubsetSelection,
    SubsetSelector,
    class_budgets,
)
from core.selectors.facility_location import (
    FacilityLocationState,
    SimilarityMatrix,
    similarity_matrix,
)

logger = logging.getLogger(__name__)

REGULARIZERS = ("none", "facility-location")


@dataclass(frozen=True)
class GlisterConfig:
    eta: float = 0.025
    rounds: int = 10
    lam: float = 0.0
    regularizer: str = "none"
    per_class: bool = True

    def __post_init__(self):
        if self.eta <= 0:
            raise SelectionError(f"GLISTER eta must be positive, got {self.eta}")
        if self.rounds < 1:
            raise SelectionError(f"GLISTER needs at least one round, got {self.rounds}")
        if self.lam < 0:
            raise SelectionError(f"GLISTER lambda must be nonnegative, got {self.lam}")
        if self.regularizer not in REGULARIZERS:
            raise SelectionError(f"unknown regularizer {self.regularizer!r}; expected {REGULARIZERS}")

    @property
    def uses_regularizer(self) -> bool:
        return self.regularizer == "facility-location" and self.lam > 0


def round_sizes(k: int, rounds: int) -> List[int]:
    """k // r per round with the remainder in the last; r is capped at k."""
    if k <= 0:
        return []
    r = min(rounds, k)
    size = k // r
    return [size] * (r - 1) + [k - size * (r - 1)]


class GlisterState:
    """Head parameters theta_S and the validation gradient at theta_S."""

    def __init__(self, features_val: np.ndarray, y_val: np.ndarray, W: np.ndarray, b: np.ndarray):
        if len(y_val) == 0:
            raise SelectionError("GLISTER needs a nonempty validation set")
        self.features_val = features_val
        self.y_val = np.asarray(y_val, dtype=np.int64)
        self.W = W
        self.b = b
        self.W_S = W.copy()
        self.b_S = b.copy()
        self.val_grad = self._val_grad()

    @classmethod
    def initialize(cls, model: LastLayerModel, X_val: np.ndarray, y_val: np.ndarray) -> "GlisterState":
        W, b = model.head()
        return cls(model.penultimate(X_val), y_val, W.copy(), b.copy())

    def _val_grad(self) -> np.ndarray:
        logits = self.features_val @ self.W_S + self.b_S
        e = logit_gradients(logits, self.y_val)
        gW = self.features_val.T @ e / len(self.y_val)
        return np.concatenate([gW.ravel(), e.mean(axis=0)])

    def relinearize(self, grad_sum: np.ndarray, eta: float) -> None:
        split = self.W.size
        self.W_S = self.W - eta * grad_sum[:split].reshape(self.W.shape)
        self.b_S = self.b - eta * grad_sum[split:]
        self.val_grad = self._val_grad()


def glister_taylor_gain(g_e: np.ndarray, state: Union[GlisterState, np.ndarray], eta: float) -> float:
    """eta * <grad L_val(theta_S), g_e>; larger means a larger predicted loss decrease."""
    val_grad = state.val_grad if isinstance(state, GlisterState) else np.asarray(state)
    return float(eta * np.dot(val_grad, g_e))


def greedy_taylor(G: np.ndarray, state: GlisterState, k: int, cfg: GlisterConfig,
                  sim: Optional[np.ndarray] = None) -> List[int]:
    """Row indices of ``G`` in the order they are added."""
    n = G.shape[0]
    if k > n:
        raise SelectionError(f"cannot select {k} of {n} points")
    available = np.ones(n, dtype=bool)
    chosen: List[int] = []
    grad_sum = np.zeros(G.shape[1])
    fl = FacilityLocationState(sim) if cfg.uses_regularizer and sim is not None else None

    for size in round_sizes(k, cfg.rounds):
        gains = cfg.eta * (G @ state.val_grad)
        if fl is None:
            candidates = np.flatnonzero(available)
            picked = candidates[np.lexsort((candidates, -gains[candidates]))][:size]
        else:
            picked = []
            for _ in range(size):
                candidates = np.flatnonzero(available)
                scores = gains[candidates] + cfg.lam * fl.gains(candidates)
                e = int(candidates[int(np.argmax(scores))])
                fl.add(e)
                available[e] = False
                picked.append(e)
        for e in picked:
            available[e] = False
            chosen.append(int(e))
            grad_sum += G[e]
        state.relinearize(grad_sum, cfg.eta)
    return chosen


def glister_greedy_dss(model: LastLayerModel, X_U: np.ndarray, y_U: np.ndarray,
                       X_V: np.ndarray, y_V: np.ndarray, k: int, cfg: GlisterConfig,
                       sim: Optional[SimilarityMatrix] = None) -> SubsetSelection:
    """
    Greedy Taylor-approximated subset selection against the validation loss.

    Args:
        model: Current network; only its penultimate features and head are used
        X_U: Ground-set features
        y_U: Ground-set labels
        X_V: Validation features
        y_V: Validation labels
        k: Subset size
        cfg: Step size, re-linearisation rounds, regulariser and per-class mode
        sim: Ground-set similarities for the facility-location regulariser;
            computed when needed and not given

    Returns:
        SubsetSelection without weights; ``info["order"]`` keeps the greedy order
    """
    n = len(y_U)
    if not 0 <= k <= n:
        raise SelectionError(f"cannot select {k} of {n} points")
    grads = per_example_last_layer_grads(model, X_U, y_U)
    if cfg.uses_regularizer and sim is None:
        sim = similarity_matrix(X_U)
    features_val = model.penultimate(X_V)
    W, b = model.head()

    if not cfg.per_class:
        state = GlisterState(features_val, y_V, W.copy(), b.copy())
        order = greedy_taylor(grads.matrix, state, k, cfg, None if sim is None else sim.values)
        return SubsetSelection(np.array(order, dtype=np.int64), budget=k, info={"order": order})

    order: List[int] = []
    y_U = np.asarray(y_U)
    y_V = np.asarray(y_V)
    for c, budget in sorted(class_budgets(y_U, k).items()):
        if budget == 0:
            continue
        members = np.flatnonzero(y_U == c)
        val_members = np.flatnonzero(y_V == c)
        if len(val_members) == 0:
            val_members = np.arange(len(y_V))
        state = GlisterState(features_val[val_members], y_V[val_members], W.copy(), b.copy())
        local_sim = None if sim is None else sim.values[np.ix_(members, members)]
        local = greedy_taylor(grads.matrix[members], state, budget, cfg, local_sim)
        order.extend(int(members[i]) for i in local)
    return SubsetSelection(np.array(order, dtype=np.int64), budget=k, info={"order": order})


class GlisterSelector(SubsetSelector):
    name = "glister"

    def __init__(self, cfg: Optional[GlisterConfig] = None):
        self.cfg = cfg or GlisterConfig()
        self._sim: Optional[SimilarityMatrix] = None

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        self._check_budget(ctx)
        if ctx.model is None:
            raise SelectionError("GLISTER needs the current model to linearise")
        if self.cfg.uses_regularizer and (self._sim is None or self._sim.n != ctx.n):
            self._sim = similarity_matrix(ctx.X_train)
        selection = glister_greedy_dss(ctx.model, ctx.X_train, ctx.y_train, ctx.X_val,
                                       ctx.y_val, ctx.k, self.cfg, self._sim)
        selection.overhead = FORWARD_COST * (ctx.n + len(ctx.y_val))
        logger.debug("glister selected %d of %d points", len(selection), ctx.n)
        return selection
