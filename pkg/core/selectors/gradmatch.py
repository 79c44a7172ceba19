"""Grad-Match: weighted subsets whose gradient sum matches a target gradient."""
import logging
from typing import List, Union

import numpy as np
from scipy.optimize import nnls

from core.nn.ndgrad import PerExampleGrads, per_example_last_layer_grads
from core.selectors.base import (
    FORWARD_COST,
    SelectionContext,
    SelectionError,
    SubsetSelection,
    SubsetSelector,
    class_budgets,
)

logger = logging.getLogger(__name__)


def _regularized_nnls(A: np.ndarray, target: np.ndarray, lam: float) -> np.ndarray:
    """argmin_{w >= 0} ||target - A w||^2 + lam ||w||^2."""
    if lam > 0:
        A = np.vstack([A, np.sqrt(lam) * np.eye(A.shape[1])])
        target = np.concatenate([target, np.zeros(A.shape[1])])
    w, _ = nnls(A, target)
    return w


def gradmatch_omp(G: Union[PerExampleGrads, np.ndarray], target: np.ndarray, k: int,
                  lam: float = 0.0, tol: float = 1e-10) -> SubsetSelection:
    """
    Nonnegative orthogonal matching pursuit over the rows of ``G``.

    The residual norm history is returned in ``info["residuals"]``; it starts
    at ||target|| and never increases. An atom whose refit would increase it
    is rejected and the pursuit stops.

    Args:
        G: Per-example gradients, or a plain (n, p) matrix
        target: Gradient to match, usually the mean training or validation gradient
        k: Maximum number of atoms
        lam: Ridge penalty on the refit weights
        tol: Stop once the residual norm falls below this

    Returns:
        SubsetSelection with the chosen indices and their nonnegative weights;
        fewer than ``k`` indices when the pursuit stops early

    Raises:
        SelectionError: If k is out of range or lam is negative
    """
    matrix = G.matrix if isinstance(G, PerExampleGrads) else np.asarray(G, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = matrix.shape[0]
    if not 0 <= k <= n:
        raise SelectionError(f"cannot select {k} of {n} points")
    if lam < 0:
        raise SelectionError(f"lambda must be nonnegative, got {lam}")

    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    support: List[int] = []
    weights = np.zeros(0)
    residual = target.copy()
    history = [float(np.linalg.norm(residual))]

    while len(support) < k and history[-1] > tol:
        corr = (matrix @ residual) / safe
        corr[norms == 0] = 0.0
        corr[support] = -np.inf
        e = int(np.argmax(corr))
        if corr[e] <= 0:
            break
        trial = support + [e]
        w = _regularized_nnls(matrix[trial].T, target, lam)
        trial_residual = target - matrix[trial].T @ w
        norm = float(np.linalg.norm(trial_residual))
        if norm > history[-1]:
            logger.debug("omp: atom %d would raise the residual, stopping", e)
            break
        support, weights, residual = trial, w, trial_residual
        history.append(norm)

    return SubsetSelection(
        np.array(support, dtype=np.int64),
        budget=k,
        weights=weights,
        info={"residuals": history, "order": list(support)},
    )


class GradMatchSelector(SubsetSelector):
    """Matches the summed training gradient of each class.

    Atoms with zero weight are dropped; if the pursuit stops early the budget
    is filled uniformly at random with the mean selected weight.
    """

    name = "gradmatch"

    def __init__(self, lam: float = 0.5, per_class: bool = True, tol: float = 1e-10):
        self.lam = lam
        self.per_class = per_class
        self.tol = tol

    def _match(self, matrix: np.ndarray, k: int):
        result = gradmatch_omp(matrix, matrix.sum(axis=0), k, self.lam, self.tol)
        keep = result.weight_vector() > 0
        return result.indices[keep], result.weight_vector()[keep]

    def select(self, ctx: SelectionContext) -> SubsetSelection:
        self._check_budget(ctx)
        if ctx.model is None:
            raise SelectionError("Grad-Match needs the current model for gradients")
        grads = per_example_last_layer_grads(ctx.model, ctx.X_train, ctx.y_train).matrix

        groups = (
            [(np.flatnonzero(ctx.y_train == c), b) for c, b in sorted(class_budgets(ctx.y_train, ctx.k).items())]
            if self.per_class else [(np.arange(ctx.n), ctx.k)]
        )
        indices, weights = [], []
        for members, budget in groups:
            if budget == 0:
                continue
            local, w = self._match(grads[members], budget)
            indices.extend(members[local].tolist())
            weights.extend(w.tolist())

        shortfall = ctx.k - len(indices)
        if shortfall > 0:
            pool = np.setdiff1d(np.arange(ctx.n), np.array(indices, dtype=np.int64))
            fill = ctx.rng.choice(pool, size=shortfall, replace=False)
            fill_weight = float(np.mean(weights)) if weights else 1.0
            indices.extend(fill.tolist())
            weights.extend([fill_weight] * shortfall)
            logger.debug("gradmatch filled %d slots at random", shortfall)

        selection = SubsetSelection(np.array(indices, dtype=np.int64), budget=ctx.k,
                                    weights=np.array(weights))
        selection.overhead = FORWARD_COST * ctx.n
        return selection
