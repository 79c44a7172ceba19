"""Cell search spaces, the softmax-mixed supernetwork and its discretisation."""
import copy
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.nn.ndgrad import (
    GradTape,
    ModelParams,
    Tensor,
    add,
    backward,
    cross_entropy,
    matmul,
    sgd_momentum_step,
    softmax_vector,
    stable_softmax,
    tanh,
    weighted_sum,
)
from core.utils.data_utils import BatchStream

logger = logging.getLogger(__name__)

OPERATIONS = ("Zero", "Identity", "Linear", "LinearNonlin", "AvgCombine", "Noise")
PARAMETRIC_OPS = frozenset({"Linear", "LinearNonlin"})
_OP_ALIASES = {op.lower(): op for op in OPERATIONS}
_OP_ALIASES.update({"skip": "Identity", "skip_connect": "Identity", "none": "Zero"})

MAX_ENUMERABLE = 200


class SearchSpaceError(ValueError):
    """Invalid search space, architecture or supernet operation."""
    pass


def canonical_op(name: str) -> str:
    try:
        return _OP_ALIASES[name.lower()]
    except KeyError:
        raise SearchSpaceError(f"unknown operation {name!r}; expected one of {OPERATIONS}")


@dataclass(frozen=True)
class SearchSpace:
    """A cell DAG: node 0 is the input, the last node feeds the classifier."""
    name: str
    nodes: int
    edges: Tuple[Tuple[int, int], ...]
    ops: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if self.nodes < 2:
            raise SearchSpaceError("a cell needs at least an input and an output node")
        if len(self.edges) != len(self.ops):
            raise SearchSpaceError("every edge needs its own operation list")
        edges = [tuple(int(v) for v in e) for e in self.edges]
        if len(set(edges)) != len(edges):
            raise SearchSpaceError("duplicate edges")
        for i, j in edges:
            if not 0 <= i < j < self.nodes:
                raise SearchSpaceError(f"edge ({i}, {j}) must satisfy 0 <= i < j < {self.nodes}")
        ops = []
        for e, op_list in enumerate(self.ops):
            if not op_list:
                raise SearchSpaceError(f"edge {edges[e]} has an empty operation set")
            ops.append(tuple(canonical_op(o) for o in op_list))
        targets = {j for _, j in edges}
        sources = {i for i, _ in edges}
        for node in range(1, self.nodes):
            if node not in targets:
                raise SearchSpaceError(f"node {node} has no incoming edge")
        for node in range(self.nodes - 1):
            if node not in sources:
                raise SearchSpaceError(f"node {node} has no outgoing edge")

        # topological order: by target node, then source node
        order = sorted(range(len(edges)), key=lambda e: (edges[e][1], edges[e][0]))
        object.__setattr__(self, "edges", tuple(edges[e] for e in order))
        object.__setattr__(self, "ops", tuple(ops[e] for e in order))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def num_architectures(self) -> int:
        return math.prod(len(o) for o in self.ops)

    def architectures(self) -> Iterator["Architecture"]:
        """Every architecture, in mixed-radix order (last edge fastest)."""
        if self.num_architectures() > MAX_ENUMERABLE:
            raise SearchSpaceError(
                f"space {self.name!r} has {self.num_architectures()} architectures; "
                f"enumeration is limited to {MAX_ENUMERABLE}"
            )
        for choices in itertools.product(*(range(len(o)) for o in self.ops)):
            yield Architecture(self, tuple(choices))

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "nodes": self.nodes,
            "edges": [list(e) for e in self.edges],
            "ops": [list(o) for o in self.ops],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SearchSpace":
        try:
            return cls(
                name=str(data.get("name", "custom")),
                nodes=int(data["nodes"]),
                edges=tuple(tuple(e) for e in data["edges"]),
                ops=tuple(tuple(o) for o in data["ops"]),
            )
        except (KeyError, TypeError) as e:
            raise SearchSpaceError(f"malformed search space description: {e}") from e

    @classmethod
    def load(cls, path: str) -> "SearchSpace":
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def resolve(cls, name_or_path: str) -> "SearchSpace":
        if name_or_path in BUILTIN_SPACES:
            return BUILTIN_SPACES[name_or_path]()
        if name_or_path.endswith(".json"):
            return cls.load(name_or_path)
        raise SearchSpaceError(
            f"unknown search space {name_or_path!r}; builtins are {sorted(BUILTIN_SPACES)}"
        )


def _complete_dag(nodes: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((i, j) for j in range(1, nodes) for i in range(j))


def nb201_toy() -> SearchSpace:
    edges = _complete_dag(4)
    ops = ("Zero", "Identity", "Linear", "LinearNonlin", "AvgCombine")
    return SearchSpace("nb201-toy", 4, edges, tuple(ops for _ in edges))


def oracle_27() -> SearchSpace:
    edges = _complete_dag(3)
    ops = ("Zero", "Identity", "LinearNonlin")
    return SearchSpace("oracle-27", 3, edges, tuple(ops for _ in edges))


def s4_toy() -> SearchSpace:
    edges = _complete_dag(4)
    return SearchSpace("s4-toy", 4, edges, tuple(("Linear", "Noise") for _ in edges))


def darts_toy() -> SearchSpace:
    edges = _complete_dag(3)
    return SearchSpace("darts-toy", 3, edges, tuple(("LinearNonlin", "Identity") for _ in edges))


BUILTIN_SPACES: Dict[str, Callable[[], SearchSpace]] = {
    "nb201-toy": nb201_toy,
    "oracle-27": oracle_27,
    "s4-toy": s4_toy,
    "darts-toy": darts_toy,
}


@dataclass(frozen=True)
class Architecture:
    """One chosen operation index per edge of ``space``."""
    space: SearchSpace
    choices: Tuple[int, ...]

    def __post_init__(self):
        choices = tuple(int(c) for c in self.choices)
        if len(choices) != self.space.num_edges:
            raise SearchSpaceError(
                f"architecture has {len(choices)} choices for {self.space.num_edges} edges"
            )
        for e, c in enumerate(choices):
            if not 0 <= c < len(self.space.ops[e]):
                raise SearchSpaceError(f"choice {c} out of range on edge {self.space.edges[e]}")
        object.__setattr__(self, "choices", choices)

    def op_names(self) -> List[str]:
        return [self.space.ops[e][c] for e, c in enumerate(self.choices)]

    def to_pairs(self) -> List[List]:
        return [[i, j, op] for (i, j), op in zip(self.space.edges, self.op_names())]

    @classmethod
    def from_pairs(cls, space: SearchSpace, pairs: Sequence[Sequence]) -> "Architecture":
        lookup = {(int(i), int(j)): canonical_op(op) for i, j, op in pairs}
        choices = []
        for e, edge in enumerate(space.edges):
            if edge not in lookup:
                raise SearchSpaceError(f"edge {edge} missing from architecture")
            try:
                choices.append(space.ops[e].index(lookup[edge]))
            except ValueError:
                raise SearchSpaceError(f"operation {lookup[edge]} not allowed on edge {edge}")
        return cls(space, tuple(choices))

    def enumeration_index(self) -> int:
        index = 0
        for e, c in enumerate(self.choices):
            index = index * len(self.space.ops[e]) + c
        return index


@dataclass
class AlphaParams:
    """Per-edge architecture logits, one entry per operation."""
    values: List[np.ndarray]

    def copy(self) -> "AlphaParams":
        return AlphaParams([v.copy() for v in self.values])

    def weights(self, edge: int, mask: Optional[np.ndarray] = None) -> np.ndarray:
        return stable_softmax(self.values[edge], mask)


def alpha_key(edge: int) -> str:
    return f"alpha.e{edge}"


class Supernet:
    """Weights theta, architecture logits alpha and per-edge operation masks."""

    HEAD_SCOPE = ("head.W", "head.b")

    def __init__(self, space: SearchSpace, in_width: int, classes: int, seed: int = 0,
                 noise_seed: Optional[int] = None, eval_noise_seed: Optional[int] = None,
                 alpha_scale: float = 1e-3):
        if in_width < 1 or classes < 2:
            raise SearchSpaceError("supernet needs in_width >= 1 and at least two classes")
        self.space = space
        self.in_width = in_width
        self.classes = classes
        rng = np.random.default_rng(seed)
        limit = math.sqrt(3.0 / in_width)
        tensors = {}
        for e, ops in enumerate(space.ops):
            for op in ops:
                if op in PARAMETRIC_OPS:
                    tensors[f"e{e}.{op}.W"] = rng.uniform(-limit, limit, size=(in_width, in_width))
                    tensors[f"e{e}.{op}.b"] = np.zeros(in_width)
        tensors["head.W"] = np.zeros((in_width, classes))
        tensors["head.b"] = np.zeros(classes)
        self.params = ModelParams(tensors)
        self.alpha = AlphaParams([alpha_scale * rng.standard_normal(len(ops)) for ops in space.ops])
        self.masks = [np.ones(len(ops), dtype=bool) for ops in space.ops]
        self.noise_rng = np.random.default_rng(seed + 1 if noise_seed is None else noise_seed)
        self.eval_noise_seed = seed + 2 if eval_noise_seed is None else eval_noise_seed
        self._avg = 0.5 * np.eye(in_width) + 0.5 * np.roll(np.eye(in_width), 1, axis=0)

    @property
    def head_scope(self) -> Tuple[str, str]:
        return self.HEAD_SCOPE

    def copy(self) -> "Supernet":
        return copy.deepcopy(self)

    # masks and discretisation state

    def active_ops(self, edge: int) -> np.ndarray:
        return np.flatnonzero(self.masks[edge])

    def is_decided(self, edge: int) -> bool:
        return len(self.active_ops(edge)) == 1

    def fix_edge(self, edge: int, op: int) -> None:
        mask = np.zeros(len(self.space.ops[edge]), dtype=bool)
        mask[op] = True
        self.masks[edge] = mask

    def fix_architecture(self, arch: Architecture) -> None:
        if arch.space != self.space:
            raise SearchSpaceError("architecture belongs to a different search space")
        for e, c in enumerate(arch.choices):
            self.fix_edge(e, c)

    @contextmanager
    def masked(self, edge: int, op: int):
        """Temporarily remove ``op`` from ``edge``; the remaining weights renormalise."""
        saved = self.masks[edge].copy()
        if saved.sum() <= 1:
            raise SearchSpaceError("cannot mask the last active operation on an edge")
        self.masks[edge] = saved.copy()
        self.masks[edge][op] = False
        try:
            yield self
        finally:
            self.masks[edge] = saved

    def architecture(self) -> Architecture:
        choices = []
        for e in range(self.space.num_edges):
            active = self.active_ops(e)
            values = self.alpha.values[e][active]
            choices.append(int(active[int(np.argmax(values))]))
        return Architecture(self.space, tuple(choices))

    # forward computation

    def _eval_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.eval_noise_seed)

    def _apply_op(self, op: str, edge: int, x: Tensor, weights: Dict[str, Tensor],
                  rng: np.random.Generator) -> Tensor:
        if op == "Zero":
            return Tensor(np.zeros(x.shape))
        if op == "Identity":
            return x
        if op == "Noise":
            return Tensor(rng.standard_normal(x.shape))
        if op == "AvgCombine":
            return matmul(x, Tensor(self._avg))
        pre = add(matmul(x, weights[f"e{edge}.{op}.W"]), weights[f"e{edge}.{op}.b"])
        return tanh(pre) if op == "LinearNonlin" else pre

    def _forward(self, batch: np.ndarray, tape: Optional[GradTape] = None,
                 wrt: Sequence[str] = (), theta: Optional[Dict[str, np.ndarray]] = None,
                 rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.in_width:
            raise SearchSpaceError(
                f"dimension mismatch: batch has shape {batch.shape}, "
                f"input node expects width {self.in_width}"
            )
        theta = self.params.tensors if theta is None else theta
        rng = self.noise_rng if rng is None else rng
        watch_theta = tape is not None and "theta" in wrt
        watch_alpha = tape is not None and "alpha" in wrt
        weights = {k: tape.watch(v, k) if watch_theta else Tensor(v, name=k)
                   for k, v in theta.items()}
        alphas = [tape.watch(a, alpha_key(e)) if watch_alpha else Tensor(a)
                  for e, a in enumerate(self.alpha.values)]

        nodes: List[Optional[Tensor]] = [Tensor(batch)] + [None] * (self.space.nodes - 1)
        for e, (i, j) in enumerate(self.space.edges):
            x = nodes[i]
            outputs = []
            for o, op in enumerate(self.space.ops[e]):
                if self.masks[e][o]:
                    outputs.append(self._apply_op(op, e, x, weights, rng))
                else:
                    if op == "Noise":
                        rng.standard_normal(x.shape)  # keep the stream aligned
                    outputs.append(Tensor(np.zeros(x.shape)))
            mixed = weighted_sum(softmax_vector(alphas[e], self.masks[e]), outputs)
            nodes[j] = mixed if nodes[j] is None else add(nodes[j], mixed)

        features = nodes[-1]
        logits = add(matmul(features, weights["head.W"]), weights["head.b"])
        return features, logits

    def forward(self, batch: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self._forward(batch, rng=rng)[1]

    def logits(self, batch: np.ndarray) -> np.ndarray:
        return self._forward(batch, rng=self._eval_rng())[1].values

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        return stable_softmax(self.logits(batch))

    def penultimate(self, batch: np.ndarray) -> np.ndarray:
        return self._forward(batch, rng=self._eval_rng())[0].values

    def head(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.params.tensors["head.W"], self.params.tensors["head.b"]

    def accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        if len(y) == 0:
            return 0.0
        return float(np.mean(np.argmax(self.logits(X), axis=1) == y))

    def gradients(self, X: np.ndarray, y: np.ndarray, wrt: str = "theta",
                  weights: Optional[np.ndarray] = None,
                  theta: Optional[Dict[str, np.ndarray]] = None,
                  rng: Optional[np.random.Generator] = None) -> Tuple[float, Dict[str, np.ndarray]]:
        """Cross-entropy on (X, y) and its gradient w.r.t. theta or alpha."""
        tape = GradTape()
        _, logits = self._forward(X, tape=tape, wrt=(wrt,), theta=theta, rng=rng)
        loss = cross_entropy(logits, y, weights)
        return float(loss.values), backward(tape, loss)

    def theta_step(self, X: np.ndarray, y: np.ndarray, lr: float, momentum: float,
                   weights: Optional[np.ndarray] = None) -> float:
        loss, grads = self.gradients(X, y, wrt="theta", weights=weights)
        sgd_momentum_step(self.params, grads, lr, momentum)
        return loss


def mixed_edge_output(alpha_edge, op_outputs: Sequence) -> Tensor:
    """sum_o softmax(alpha)_o * o(x)."""
    alpha_edge = alpha_edge if isinstance(alpha_edge, Tensor) else Tensor(alpha_edge)
    if alpha_edge.values.size != len(op_outputs):
        raise SearchSpaceError(
            f"length mismatch: {alpha_edge.values.size} logits for {len(op_outputs)} outputs"
        )
    return weighted_sum(softmax_vector(alpha_edge), list(op_outputs))


def supernet_forward(net: Supernet, batch: np.ndarray,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
    return net.forward(batch, rng=rng)


def alpha_step(net: Supernet, X_S: np.ndarray, y_S: np.ndarray, X_V: np.ndarray,
               y_V: np.ndarray, zeta: float, lr_alpha: float,
               weights: Optional[np.ndarray] = None) -> AlphaParams:
    """One gradient step on alpha against the validation loss.

    With ``zeta > 0`` the validation loss is evaluated at the one-step
    look-ahead weights theta - zeta * grad L_train(theta, alpha, S), treated as
    constant with respect to alpha.
    """
    if len(y_S) == 0:
        raise SearchSpaceError("alpha_step needs a nonempty training subset")
    if zeta < 0 or lr_alpha < 0:
        raise SearchSpaceError("zeta and lr_alpha must be nonnegative")
    theta = None
    if zeta > 0:
        _, g = net.gradients(X_S, y_S, wrt="theta", weights=weights)
        theta = {k: v - zeta * g[k] for k, v in net.params.tensors.items()}
    _, grads = net.gradients(X_V, y_V, wrt="alpha", theta=theta)
    for e in range(net.space.num_edges):
        net.alpha.values[e] = net.alpha.values[e] - lr_alpha * grads[alpha_key(e)]
    return net.alpha


def discretize_argmax(alpha: AlphaParams, space: SearchSpace) -> Architecture:
    return Architecture(space, tuple(int(np.argmax(v)) for v in alpha.values))


def _masked_accuracy(net: Supernet, X: np.ndarray, y: np.ndarray, edge: int, op: int) -> float:
    with net.masked(edge, op):
        return net.accuracy(X, y)


def perturbation_scores(net: Supernet, X_V: np.ndarray, y_V: np.ndarray, edge: int,
                        workers: int = 1) -> np.ndarray:
    """Validation-accuracy drop when each active operation on ``edge`` is masked.

    Inactive operations score -inf. Each evaluation reuses the same noise
    draws, so differences come from the mask alone.
    """
    if len(y_V) == 0:
        raise SearchSpaceError("perturbation scoring needs a nonempty validation set")
    active = net.active_ops(edge)
    scores = np.full(len(net.space.ops[edge]), -np.inf)
    if len(active) == 1:
        scores[active[0]] = 0.0
        return scores
    base = net.accuracy(X_V, y_V)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(lambda o: _masked_accuracy(net.copy(), X_V, y_V, edge, o), active))
    else:
        accs = [_masked_accuracy(net, X_V, y_V, edge, o) for o in active]
    for o, acc in zip(active, accs):
        scores[o] = base - acc
    return scores


def split_evenly(total: int, parts: int) -> List[int]:
    if parts <= 0:
        return []
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def project(net: Supernet, X_V: np.ndarray, y_V: np.ndarray, tune_X: np.ndarray,
            tune_y: np.ndarray, tune_epochs: float, batch_size: int, lr: float,
            momentum: float, rng: np.random.Generator,
            tune_weights: Optional[np.ndarray] = None,
            on_examples: Optional[Callable[[int], None]] = None) -> Architecture:
    """
    Perturbation-based projection, one edge at a time in topological order.

    Each undecided edge keeps the operation with the highest perturbation
    score (lowest index on ties), then theta is fine-tuned for that edge's
    share of ``tune_epochs``. Scores are accuracy drops, not alpha weights: if
    masking the alpha-dominant operation raises validation accuracy, it scores
    below zero and a weaker operation is kept.

    Args:
        net: Supernet to discretise in place; decided edges are skipped
        X_V: Validation features used for scoring
        y_V: Validation labels
        tune_X: Fine-tuning features (the search subset or the full train split)
        tune_y: Fine-tuning labels
        tune_epochs: Total fine-tuning epochs, split evenly across undecided edges
        batch_size: Fine-tuning mini-batch size
        lr: Fine-tuning learning rate
        momentum: Fine-tuning momentum
        rng: Shuffles the fine-tuning batches
        tune_weights: Optional per-example weights indexed like ``tune_y``
        on_examples: Called with each fine-tuning batch size, for cost counting

    Returns:
        The fully decided Architecture
    """
    if tune_epochs < 0:
        raise SearchSpaceError("tune_epochs must be nonnegative")
    undecided = [e for e in range(net.space.num_edges) if not net.is_decided(e)]
    n_tune = len(tune_y)
    steps_per_epoch = math.ceil(n_tune / batch_size) if n_tune else 0
    budgets = split_evenly(int(round(tune_epochs * steps_per_epoch)), len(undecided))
    stream = BatchStream(np.arange(n_tune), batch_size, rng) if n_tune else None

    for e, steps in zip(undecided, budgets):
        scores = perturbation_scores(net, X_V, y_V, e)
        choice = int(np.argmax(scores))
        net.fix_edge(e, choice)
        logger.info("projection: edge %s -> %s (scores %s)", net.space.edges[e],
                    net.space.ops[e][choice], np.round(scores, 4).tolist())
        for _ in range(steps):
            idx = stream.next_batch()
            w = None if tune_weights is None else tune_weights[idx]
            net.theta_step(tune_X[idx], tune_y[idx], lr, momentum, w)
            if on_examples is not None:
                on_examples(len(idx))
    return net.architecture()
