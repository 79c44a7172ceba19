"""Dense reverse-mode differentiation on numpy arrays.

A ``GradTape`` records primitive operations in creation order, which is a
topological order of the computation. ``backward`` walks the tape once in
reverse and accumulates gradients additively where a value fans out.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Protocol


class NdGradError(ValueError):
    """Shape or argument error raised by the differentiation core."""
    pass


ArrayLike = Union[np.ndarray, float, Sequence[float]]


class Tensor:
    """A float64 array, optionally attached to a tape."""

    __slots__ = ("values", "tape", "index", "name")

    def __init__(self, values: ArrayLike, tape: Optional["GradTape"] = None,
                 index: Optional[int] = None, name: Optional[str] = None):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NdGradError(f"non-finite entries in tensor {name or '<anonymous>'}")
        self.values = arr
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"


@dataclass
class _Node:
    parents: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradTape:
    """Records operations so gradients can be pulled back from a scalar."""

    def __init__(self):
        self._nodes: List[Optional[_Node]] = []
        self.sources: Dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, values: ArrayLike, name: str) -> Tensor:
        """Register a differentiable source under a unique name."""
        if name in self.sources:
            raise NdGradError(f"source {name!r} is already watched on this tape")
        tensor = Tensor(values, tape=self, index=len(self._nodes), name=name)
        self._nodes.append(None)
        self.sources[name] = tensor
        return tensor

    def record(self, values: np.ndarray, parents: Tuple[Tensor, ...],
               vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
        tensor = Tensor(values, tape=self, index=len(self._nodes))
        self._nodes.append(_Node(parents=parents, vjp=vjp))
        return tensor

    def gradient(self, root: Tensor) -> Dict[str, np.ndarray]:
        """Gradients of a scalar root with respect to every watched source."""
        if root.values.size != 1:
            raise NdGradError(f"backward needs a scalar root, got shape {root.shape}")
        if root.tape is None:
            return {name: np.zeros_like(t.values) for name, t in self.sources.items()}
        if root.tape is not self:
            raise NdGradError("root tensor belongs to a different tape")

        grads: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[root.index] = np.ones_like(root.values)
        for idx in range(root.index, -1, -1):
            g = grads[idx]
            node = self._nodes[idx]
            if g is None or node is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or parent.tape is not self:
                    continue
                acc = grads[parent.index]
                grads[parent.index] = pg if acc is None else acc + pg

        out = {}
        for name, tensor in self.sources.items():
            g = grads[tensor.index]
            out[name] = np.zeros_like(tensor.values) if g is None else g
        return out


def backward(tape: GradTape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of ``loss`` keyed by the names watched on ``tape``."""
    return tape.gradient(loss)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(tensors: Sequence[Tensor]) -> Optional[GradTape]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise NdGradError("operands are recorded on different tapes")
    return tape


def _emit(values: np.ndarray, parents: Tuple[Tensor, ...], vjp) -> Tensor:
    tape = _tape_of(parents)
    if tape is None:
        return Tensor(values)
    return tape.record(values, parents, vjp)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Primitive operations

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.values + b.values
    except ValueError as e:
        raise NdGradError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.values - b.values
    except ValueError as e:
        raise NdGradError(f"cannot subtract shapes {a.shape} and {b.shape}") from e
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.values * b.values
    except ValueError as e:
        raise NdGradError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return _emit(out, (a, b), lambda g: (_unbroadcast(g * b.values, a.shape),
                                         _unbroadcast(g * a.values, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    a = _lift(a)
    return _emit(a.values * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise NdGradError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise NdGradError(
            f"dimension mismatch: input width {a.shape[1]} does not match "
            f"weight rows {b.shape[0]}"
        )
    return _emit(a.values @ b.values, (a, b),
                 lambda g: (g @ b.values.T, a.values.T @ g))


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    y = np.tanh(a.values)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def sum_all(a: Tensor) -> Tensor:
    a = _lift(a)
    return _emit(np.asarray(a.values.sum()), (a,),
                 lambda g: (np.full_like(a.values, float(g)),))


def mean(a: Tensor) -> Tensor:
    a = _lift(a)
    n = a.values.size
    return _emit(np.asarray(a.values.mean()), (a,),
                 lambda g: (np.full_like(a.values, float(g) / n),))


def softmax_vector(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax of a 1-D tensor; masked-out entries get weight exactly 0."""
    a = _lift(a)
    if a.values.ndim != 1:
        raise NdGradError(f"softmax_vector expects a 1-D tensor, got {a.shape}")
    y = stable_softmax(a.values, mask)
    return _emit(y, (a,), lambda g: (y * (g - float(np.dot(g, y))),))


def weighted_sum(weights: Tensor, items: Sequence[Tensor]) -> Tensor:
    """sum_k weights[k] * items[k] over same-shaped items."""
    weights = _lift(weights)
    items = [_lift(t) for t in items]
    if weights.values.shape != (len(items),):
        raise NdGradError(
            f"length mismatch: {weights.values.size} weights for {len(items)} outputs"
        )
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise NdGradError(f"mixed outputs must share a shape, got {sorted(shapes)}")
    w = weights.values
    out = np.zeros_like(items[0].values)
    for wk, t in zip(w, items):
        out = out + wk * t.values

    def vjp(g):
        gw = np.array([float(np.sum(g * t.values)) for t in items])
        return (gw,) + tuple(wk * g for wk in w)

    return _emit(out, (weights,) + tuple(items), vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray,
                  weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean (or weight-normalised) negative log-likelihood of ``labels``."""
    logits = _lift(logits)
    if logits.values.ndim != 2:
        raise NdGradError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise NdGradError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise NdGradError(f"labels must lie in [0, {c})")
    if weights is None:
        coef = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n,) or np.any(weights < 0) or weights.sum() <= 0:
            raise NdGradError("sample weights must be nonnegative with a positive sum")
        coef = weights / weights.sum()

    logp = log_softmax_rows(logits.values)
    rows = np.arange(n)
    loss = -float(np.dot(coef, logp[rows, labels]))
    probs = np.exp(logp)

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (float(g) * coef[:, None] * d,)

    return _emit(np.asarray(loss), (logits,), vjp)


# Numeric helpers

def stable_softmax(z: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def logit_gradients(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example gradient of the loss w.r.t. the logits: softmax - one-hot."""
    probs = stable_softmax(logits)
    probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] -= 1.0
    return probs


# Parameters, models and optimisation

@dataclass
class ModelParams:
    """Named parameter arrays with momentum buffers keyed identically."""
    tensors: Dict[str, np.ndarray]
    momentum: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.tensors.items():
            self.tensors[name] = np.asarray(value, dtype=np.float64)
            buf = self.momentum.get(name)
            if buf is None:
                self.momentum[name] = np.zeros_like(self.tensors[name])
            elif buf.shape != self.tensors[name].shape:
                raise NdGradError(f"momentum buffer for {name!r} has the wrong shape")
        extra = set(self.momentum) - set(self.tensors)
        if extra:
            raise NdGradError(f"momentum buffers without parameters: {sorted(extra)}")

    def names(self) -> List[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            momentum={k: v.copy() for k, v in self.momentum.items()},
        )

    def watch(self, tape: Optional[GradTape]) -> Dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v, name=k) for k, v in self.tensors.items()}
        return {k: tape.watch(v, k) for k, v in self.tensors.items()}


def sgd_momentum_step(params: ModelParams, grads: Mapping[str, np.ndarray],
                      lr: float, momentum: float) -> ModelParams:
    """v <- momentum * v + g; p <- p - lr * v, for every name in ``grads``."""
    if lr <= 0:
        raise NdGradError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise NdGradError(f"momentum must lie in [0, 1), got {momentum}")
    for name, g in grads.items():
        if name not in params.tensors:
            raise NdGradError(f"gradient for unknown parameter {name!r}")
        buf = momentum * params.momentum[name] + g
        params.momentum[name] = buf
        params.tensors[name] = params.tensors[name] - lr * buf
    return params


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise NdGradError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class MLPGraph:
    """Fully connected topology: input width, hidden widths, class count."""
    widths: Tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise NdGradError(f"invalid layer widths {self.widths}")
        if self.activation not in ("tanh", "identity"):
            raise NdGradError(f"unsupported activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def classes(self) -> int:
        return self.widths[-1]

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def head_scope(self) -> Tuple[str, str]:
        last = self.depth - 1
        return (f"W{last}", f"b{last}")

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        """Glorot-uniform hidden layers; the classifier head starts at zero."""
        tensors = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if i == self.depth - 1:
                tensors[f"W{i}"] = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                tensors[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            tensors[f"b{i}"] = np.zeros(fan_out)
        return ModelParams(tensors)


def _check_batch(batch: np.ndarray, width: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != width:
        raise NdGradError(
            f"dimension mismatch: batch has shape {batch.shape}, model expects width {width}"
        )
    return batch


def _mlp_layers(watched: Mapping[str, Tensor], graph: MLPGraph, batch: np.ndarray):
    h = Tensor(_check_batch(batch, graph.in_width))
    for i in range(graph.depth - 1):
        h = add(matmul(h, watched[f"W{i}"]), watched[f"b{i}"])
        if graph.activation == "tanh":
            h = tanh(h)
    last = graph.depth - 1
    logits = add(matmul(h, watched[f"W{last}"]), watched[f"b{last}"])
    return h, logits


def forward(model: ModelParams, graph: MLPGraph, batch: np.ndarray,
            tape: Optional[GradTape] = None) -> Tensor:
    """Logits of ``batch``; parameters are watched on ``tape`` when given."""
    _, logits = _mlp_layers(model.watch(tape), graph, batch)
    return logits


class LastLayerModel(Protocol):
    """A classifier whose last layer is affine over cached features."""

    def penultimate(self, batch: np.ndarray) -> np.ndarray:
        ...

    def head(self) -> Tuple[np.ndarray, np.ndarray]:
        ...

    @property
    def head_scope(self) -> Tuple[str, str]:
        ...


class MLP:
    """ModelParams bound to an MLPGraph."""

    def __init__(self, graph: MLPGraph, params: ModelParams):
        self.graph = graph
        self.params = params

    @classmethod
    def create(cls, graph: MLPGraph, seed: int) -> "MLP":
        return cls(graph, graph.init_params(np.random.default_rng(seed)))

    @property
    def head_scope(self) -> Tuple[str, str]:
        return self.graph.head_scope

    def logits(self, batch: np.ndarray) -> np.ndarray:
        return forward(self.params, self.graph, batch).values

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        return stable_softmax(self.logits(batch))

    def penultimate(self, batch: np.ndarray) -> np.ndarray:
        h, _ = _mlp_layers(self.params.watch(None), self.graph, batch)
        return h.values

    def head(self) -> Tuple[np.ndarray, np.ndarray]:
        w_name, b_name = self.head_scope
        return self.params.tensors[w_name], self.params.tensors[b_name]

    def loss_and_grads(self, batch: np.ndarray, labels: np.ndarray,
                       weights: Optional[np.ndarray] = None) -> Tuple[float, Dict[str, np.ndarray]]:
        tape = GradTape()
        logits = forward(self.params, self.graph, batch, tape)
        loss = cross_entropy(logits, labels, weights)
        return float(loss.values), backward(tape, loss)

    def train_step(self, batch: np.ndarray, labels: np.ndarray, lr: float, momentum: float,
                   weights: Optional[np.ndarray] = None) -> float:
        loss, grads = self.loss_and_grads(batch, labels, weights)
        sgd_momentum_step(self.params, grads, lr, momentum)
        return loss

    def accuracy(self, batch: np.ndarray, labels: np.ndarray) -> float:
        if len(labels) == 0:
            return 0.0
        return float(np.mean(np.argmax(self.logits(batch), axis=1) == labels))


@dataclass
class PerExampleGrads:
    """One row per example: flattened (W, b) gradient of that example's loss."""
    matrix: np.ndarray
    scope: Tuple[str, str]
    features: np.ndarray
    logit_grads: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def per_example_last_layer_grads(model: LastLayerModel, batch: np.ndarray,
                                 labels: np.ndarray) -> PerExampleGrads:
    """
    Rows g_i = [vec(h_i (p_i - y_i)^T), p_i - y_i] for the classifier head.

    Args:
        model: Anything exposing penultimate features, a (W, b) head and its scope
        batch: (n, d) inputs, n >= 1
        labels: n integer class labels

    Returns:
        PerExampleGrads whose rows average to the batch-mean head gradient
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise NdGradError("per-example gradients need a nonempty 2-D batch")
    features = model.penultimate(batch)
    w, b = model.head()
    logits = features @ w + b
    e = logit_gradients(logits, labels)
    n, m = features.shape
    outer = (features[:, :, None] * e[:, None, :]).reshape(n, m * e.shape[1])
    return PerExampleGrads(
        matrix=np.concatenate([outer, e], axis=1),
        scope=tuple(model.head_scope),
        features=features,
        logit_grads=e,
    )


def flatten_head_grads(grads: Mapping[str, np.ndarray], scope: Tuple[str, str]) -> np.ndarray:
    """Flatten a (W, b) gradient pair in the row layout of PerExampleGrads."""
    w_name, b_name = scope
    return np.concatenate([grads[w_name].ravel(), grads[b_name].ravel()])
