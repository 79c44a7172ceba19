"""Bi-level architecture search on adaptively selected training subsets."""
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.config import BilevelConfig
from core.nn.ndgrad import cosine_lr
from core.nn.supernet import (
    Architecture,
    SearchSpace,
    Supernet,
    alpha_step,
    discretize_argmax,
    project,
)
from core.selectors import SelectionContext, SubsetSelection, SubsetSelector, get_selector
from core.utils.data_utils import BatchStream, Dataset
from core.utils.random_utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

REFRESH, ALPHA, THETA = "refresh", "alpha", "theta"


class SearchError(ValueError):
    """Invalid search request."""
    pass


def build_schedule(total_steps: int, refresh_every: Optional[int],
                   alpha_every: int) -> List[Tuple[int, str]]:
    """Events of every step t in [0, total_steps), in execution order.

    A refresh happens when t % refresh_every == 0 (only at t = 0 when
    ``refresh_every`` is None), an alpha step when t % alpha_every == 0, and a
    theta step at every t.
    """
    if refresh_every is not None and refresh_every < 1:
        raise SearchError("refresh period must be >= 1")
    if alpha_every < 1:
        raise SearchError("alpha period must be >= 1")
    events = []
    for t in range(total_steps):
        if (t == 0) if refresh_every is None else (t % refresh_every == 0):
            events.append((t, REFRESH))
        if t % alpha_every == 0:
            events.append((t, ALPHA))
        events.append((t, THETA))
    return events


@dataclass
class SearchTrace:
    """Everything that happened during one search run."""
    method: str
    seed: int
    subset_size: int
    steps_per_epoch: int
    total_steps: int
    events: List[Tuple[int, str]] = field(default_factory=list)
    subsets: List[Tuple[int, SubsetSelection]] = field(default_factory=list)
    theta_examples: int = 0
    projection_examples: int = 0
    selector_overhead: float = 0.0
    counter: List[int] = field(default_factory=list)
    theta_losses: List[float] = field(default_factory=list)
    step_digests: List[str] = field(default_factory=list)
    wall_time: float = 0.0
    architecture: Optional[Architecture] = None
    alpha_final: Optional[List[List[float]]] = None

    @property
    def refresh_steps(self) -> List[int]:
        return [t for t, kind in self.events if kind == REFRESH]

    @property
    def alpha_steps(self) -> List[int]:
        return [t for t, kind in self.events if kind == ALPHA]

    @property
    def last_subset(self) -> Optional[SubsetSelection]:
        return self.subsets[-1][1] if self.subsets else None

    def to_record(self, include_subsets: bool = True) -> Dict[str, Any]:
        cost = count_cost(self)
        record = {
            "method": self.method,
            "seed": self.seed,
            "subset_size": self.subset_size,
            "steps_per_epoch": self.steps_per_epoch,
            "total_steps": self.total_steps,
            "refresh_steps": self.refresh_steps,
            "alpha_step_count": len(self.alpha_steps),
            "theta_examples": self.theta_examples,
            "projection_examples": self.projection_examples,
            "selector_overhead": self.selector_overhead,
            "cost": cost.total,
            "wall_time": self.wall_time,
            "architecture": None if self.architecture is None else self.architecture.to_pairs(),
            "alpha_final": self.alpha_final,
        }
        if include_subsets:
            record["subsets"] = [dict(step=t, **s.to_record()) for t, s in self.subsets]
        return record


@dataclass(frozen=True)
class CostReport:
    """Example-gradient accounting for one run."""
    theta_examples: int
    projection_examples: int
    selector_overhead: float

    @property
    def total(self) -> float:
        return self.theta_examples + self.projection_examples + self.selector_overhead


def count_cost(trace: SearchTrace) -> CostReport:
    return CostReport(trace.theta_examples, trace.projection_examples, trace.selector_overhead)


def _digest(net: Supernet) -> str:
    h = hashlib.sha256()
    for name in sorted(net.params.tensors):
        h.update(net.params.tensors[name].tobytes())
    for a in net.alpha.values:
        h.update(a.tobytes())
    return h.hexdigest()


class AdaptiveSearch:
    """One search run: alternating subset refreshes, alpha steps and theta steps.

    Data order, weight initialisation and noise derive from (master_seed,
    seed) only; the selector stream also folds in the selector name.
    """

    def __init__(self, space: SearchSpace, dataset: Dataset, cfg: BilevelConfig, seed: int,
                 master_seed: int = 0, method: Optional[str] = None,
                 selector: Optional[SubsetSelector] = None, record_digests: bool = False):
        self.space = space
        self.data = dataset
        self.cfg = cfg
        self.seed = seed
        self.master_seed = master_seed
        self.method = method or cfg.selector
        self.selector = selector or get_selector(cfg.selector, **cfg.selector_kwargs())
        self.record_digests = record_digests

        n_train = len(dataset.y_train)
        self.k = int(math.floor(cfg.fraction * n_train + 1e-9))
        if self.k < 1:
            raise SearchError(
                f"fraction {cfg.fraction} of {n_train} training points leaves an empty subset"
            )
        self.steps_per_epoch = math.ceil(self.k / cfg.batch_size)
        self.total_steps = cfg.epochs * self.steps_per_epoch
        if self.total_steps < 1:
            raise SearchError("search needs at least one step")
        self.refresh_every = (
            None if cfg.refresh_epochs is None else cfg.refresh_epochs * self.steps_per_epoch
        )

        self.net = Supernet(
            space, dataset.n_features, dataset.classes,
            seed=derive_seed(master_seed, seed, "init"),
            noise_seed=derive_seed(master_seed, seed, "noise"),
            eval_noise_seed=derive_seed(master_seed, seed, "eval-noise"),
        )
        self.data_rng = make_rng(master_seed, seed, "data")
        self.val_rng = make_rng(master_seed, seed, "val")
        self.selector_rng = make_rng(master_seed, seed, "selector", self.selector.name)

        self.trace = SearchTrace(
            method=self.method, seed=seed, subset_size=self.k,
            steps_per_epoch=self.steps_per_epoch, total_steps=self.total_steps,
        )
        self.selection: Optional[SubsetSelection] = None
        self._weights: Optional[np.ndarray] = None
        self._stream: Optional[BatchStream] = None
        self._val_stream = BatchStream(np.arange(len(dataset.y_val)), cfg.batch_size, self.val_rng)

    def _refresh(self, t: int) -> None:
        d = self.data
        ctx = SelectionContext(d.X_train, d.y_train, d.X_val, d.y_val, self.k, d.classes,
                               self.selector_rng, model=self.net)
        selection = self.selector.select(ctx)
        self.selection = selection
        self.trace.subsets.append((t, selection))
        self.trace.selector_overhead += selection.overhead
        if selection.weights is None:
            self._weights = None
        else:
            self._weights = np.ones(len(d.y_train))
            self._weights[selection.indices] = selection.weights
        self._stream = BatchStream(selection.indices, self.cfg.batch_size, self.data_rng)
        logger.info("step %d: refreshed subset (%d points, overhead %.1f)",
                    t, len(selection), selection.overhead)

    def _batch_weights(self, idx: np.ndarray) -> Optional[np.ndarray]:
        return None if self._weights is None else self._weights[idx]

    def _alpha(self) -> None:
        d, cfg = self.data, self.cfg
        S = self.selection.indices
        val_idx = self._val_stream.next_batch()
        alpha_step(self.net, d.X_train[S], d.y_train[S], d.X_val[val_idx], d.y_val[val_idx],
                   cfg.zeta, cfg.alpha_lr, self._batch_weights(S))

    def _theta(self, t: int) -> None:
        d, cfg = self.data, self.cfg
        lr = cosine_lr(t, self.total_steps, cfg.lr) if cfg.schedule == "cosine" else cfg.lr
        idx = self._stream.next_batch()
        loss = self.net.theta_step(d.X_train[idx], d.y_train[idx], lr, cfg.momentum,
                                   self._batch_weights(idx))
        self.trace.theta_examples += len(idx)
        self.trace.counter.append(self.trace.theta_examples)
        self.trace.theta_losses.append(loss)
        logger.debug("step %d: theta loss %.5f (lr %.5f)", t, loss, lr)

    def _discretize(self) -> Architecture:
        d, cfg = self.data, self.cfg
        if cfg.discretization == "argmax":
            return discretize_argmax(self.net.alpha, self.space)
        if cfg.projection_data == "full":
            tune = np.arange(len(d.y_train))
            weights = None
        else:
            tune = self.selection.indices
            weights = self._batch_weights(tune)

        def count(n: int) -> None:
            self.trace.projection_examples += n

        return project(
            self.net, d.X_val, d.y_val, d.X_train[tune], d.y_train[tune],
            cfg.projection_epochs, cfg.batch_size, cfg.lr, cfg.momentum,
            make_rng(self.master_seed, self.seed, "projection"),
            tune_weights=weights, on_examples=count,
        )

    def run(self) -> Tuple[Architecture, SearchTrace]:
        start = time.perf_counter()
        schedule = build_schedule(self.total_steps, self.refresh_every, self.cfg.alpha_every)
        for t, kind in schedule:
            if kind == REFRESH:
                self._refresh(t)
            elif kind == ALPHA:
                self._alpha()
            else:
                self._theta(t)
            self.trace.events.append((t, kind))
            if self.record_digests and kind == THETA:
                self.trace.step_digests.append(_digest(self.net))

        arch = self._discretize()
        self.trace.architecture = arch
        self.trace.alpha_final = [a.tolist() for a in self.net.alpha.values]
        self.trace.wall_time = time.perf_counter() - start
        logger.info("%s seed %d: %s after %d steps", self.method, self.seed,
                    arch.op_names(), self.total_steps)
        return arch, self.trace


def adaptive_dpt(space: SearchSpace, dataset: Dataset, cfg: BilevelConfig, seed: int,
                 master_seed: int = 0, method: Optional[str] = None,
                 record_digests: bool = False) -> Tuple[Architecture, SearchTrace]:
    search = AdaptiveSearch(space, dataset, cfg, seed, master_seed, method,
                            record_digests=record_digests)
    return search.run()


def darts_pt_config(cfg: BilevelConfig) -> BilevelConfig:
    """Full data, a single selection and full-data projection."""
    return replace(cfg, fraction=1.0, refresh_epochs=None, selector="full", projection_data="full")


def darts_pt(space: SearchSpace, dataset: Dataset, cfg: BilevelConfig, seed: int,
             master_seed: int = 0, record_digests: bool = False) -> Tuple[Architecture, SearchTrace]:
    return adaptive_dpt(space, dataset, darts_pt_config(cfg), seed, master_seed,
                        method="darts-pt", record_digests=record_digests)


def train_final(arch: Architecture, X_train: np.ndarray, y_train: np.ndarray,
                X_test: np.ndarray, y_test: np.ndarray, epochs: int, seed: int,
                lr: float = 0.025, momentum: float = 0.9, batch_size: int = 64,
                schedule: str = "cosine", classes: Optional[int] = None) -> float:
    """Train ``arch`` from a fresh initialisation and return its test accuracy."""
    if epochs < 0:
        raise SearchError("epochs must be >= 0")
    if classes is None:
        classes = max(2, int(max(y_train.max(), y_test.max())) + 1)
    net = Supernet(
        arch.space, X_train.shape[1], classes,
        seed=derive_seed(seed, "final-init"),
        noise_seed=derive_seed(seed, "final-noise"),
        eval_noise_seed=derive_seed(seed, "final-eval-noise"),
    )
    net.fix_architecture(arch)
    stream = BatchStream(np.arange(len(y_train)), batch_size, make_rng(seed, "final-data"))
    total = epochs * stream.steps_per_epoch
    for t in range(total):
        step_lr = cosine_lr(t, total, lr) if schedule == "cosine" else lr
        idx = stream.next_batch()
        net.theta_step(X_train[idx], y_train[idx], step_lr, momentum)
    return net.accuracy(X_test, y_test)
