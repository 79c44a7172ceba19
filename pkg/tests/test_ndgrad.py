import math

import numpy as np
import pytest

from core.nn.ndgrad import (
    MLP,
    GradTape,
    MLPGraph,
    ModelParams,
    NdGradError,
    Tensor,
    add,
    backward,
    cosine_lr,
    cross_entropy,
    flatten_head_grads,
    forward,
    matmul,
    mul,
    per_example_last_layer_grads,
    sgd_momentum_step,
    softmax_vector,
    sum_all,
    tanh,
    weighted_sum,
)


def _numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def test_tensor_rejects_non_finite():
    with pytest.raises(NdGradError):
        Tensor([1.0, np.nan])
    with pytest.raises(NdGradError):
        Tensor([np.inf])


def test_forward_zero_weights_gives_zero_logits():
    graph = MLPGraph((3, 2), activation="identity")
    params = ModelParams({"W0": np.zeros((3, 2)), "b0": np.zeros(2)})
    logits = forward(params, graph, np.random.default_rng(0).normal(size=(4, 3)))
    assert np.array_equal(logits.values, np.zeros((4, 2)))


def test_forward_identity_layer_passes_input_through():
    graph = MLPGraph((3, 3), activation="identity")
    params = ModelParams({"W0": np.eye(3), "b0": np.zeros(3)})
    x = np.arange(6.0).reshape(2, 3)
    assert np.allclose(forward(params, graph, x).values, x)


def test_forward_rejects_width_mismatch():
    model = MLP.create(MLPGraph((3, 4, 2)), seed=0)
    with pytest.raises(NdGradError, match="dimension"):
        model.logits(np.zeros((2, 5)))


def test_cross_entropy_uniform_logits_is_log_classes():
    loss = cross_entropy(Tensor(np.zeros((5, 4))), np.array([0, 1, 2, 3, 0]))
    assert float(loss.values) == pytest.approx(math.log(4))


def test_cross_entropy_confident_correct_is_near_zero():
    logits = np.array([[50.0, 0.0], [0.0, 50.0]])
    assert float(cross_entropy(Tensor(logits), np.array([0, 1])).values) < 1e-10


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(NdGradError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_weighted_cross_entropy_normalises_weights():
    logits = np.random.default_rng(2).normal(size=(3, 2))
    labels = np.array([0, 1, 1])
    w = np.array([1.0, 2.0, 3.0])
    manual = -np.sum(w / w.sum() * (logits[np.arange(3), labels]
                                    - np.log(np.exp(logits).sum(axis=1))))
    assert float(cross_entropy(Tensor(logits), labels, w).values) == pytest.approx(manual)
    assert float(cross_entropy(Tensor(logits), labels, 10 * w).values) == pytest.approx(manual)


def test_backward_accumulates_at_fan_out():
    tape = GradTape()
    x = tape.watch(np.array([2.0, -1.0]), "x")
    y = sum_all(add(mul(x, x), x))
    grads = backward(tape, y)
    assert np.allclose(grads["x"], 2 * np.array([2.0, -1.0]) + 1)


def test_backward_requires_scalar_root():
    tape = GradTape()
    x = tape.watch(np.ones(3), "x")
    with pytest.raises(NdGradError):
        backward(tape, mul(x, x))


def test_backward_of_constant_is_zero():
    tape = GradTape()
    tape.watch(np.ones(2), "x")
    assert np.array_equal(backward(tape, Tensor(3.0))["x"], np.zeros(2))


@pytest.mark.parametrize("net_seed", range(20))
def test_mlp_gradients_match_finite_differences(net_seed):
    rng = np.random.default_rng(net_seed)
    model = MLP.create(MLPGraph((3, 4, 3)), seed=net_seed)
    for name in model.params.names():
        model.params.tensors[name] = rng.normal(0.0, 0.7, size=model.params.tensors[name].shape)
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)
    _, grads = model.loss_and_grads(X, y)

    def loss():
        return model.loss_and_grads(X, y)[0]

    for name in model.params.names():
        numeric = _numeric_grad(loss, model.params.tensors[name])
        scale = np.maximum(np.abs(numeric), 1e-3)
        assert np.all(np.abs(grads[name] - numeric) / scale < 1e-4), name


def test_softmax_and_weighted_sum_gradients():
    rng = np.random.default_rng(4)
    a0 = rng.normal(size=3)
    items = [rng.normal(size=(2, 2)) for _ in range(3)]
    target = rng.normal(size=(2, 2))

    def value(a):
        tape = GradTape()
        av = tape.watch(a, "a")
        out = weighted_sum(softmax_vector(av), [Tensor(t) for t in items])
        return tape, sum_all(mul(tanh(out), target))

    tape, root = value(a0)
    analytic = backward(tape, root)["a"]
    numeric = _numeric_grad(lambda: float(value(a0)[1].values), a0)
    assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_softmax_mask_zeroes_masked_entries():
    w = softmax_vector(Tensor([1.0, 5.0, 2.0]), mask=np.array([True, False, True]))
    assert w.values[1] == 0.0
    assert w.values.sum() == pytest.approx(1.0)


def test_weighted_sum_length_mismatch():
    with pytest.raises(NdGradError, match="length"):
        weighted_sum(Tensor([0.5, 0.5]), [Tensor(np.ones(2))])


def test_per_example_grads_match_single_example_backward(tiny_mlp):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, size=5)
    G = per_example_last_layer_grads(tiny_mlp, X, y)
    assert G.matrix.shape == (5, 5 * 2 + 2)
    for i in range(5):
        _, grads = tiny_mlp.loss_and_grads(X[i:i + 1], y[i:i + 1])
        assert np.allclose(G.matrix[i], flatten_head_grads(grads, G.scope))


def test_per_example_grads_average_to_batch_grad(tiny_mlp):
    rng = np.random.default_rng(10)
    X = rng.normal(size=(3, 3))
    y = rng.integers(0, 2, size=3)
    G = per_example_last_layer_grads(tiny_mlp, X, y)
    _, grads = tiny_mlp.loss_and_grads(X, y)
    assert np.allclose(G.matrix.mean(axis=0), flatten_head_grads(grads, G.scope),
                       rtol=1e-10, atol=1e-14)


def test_per_example_grads_are_batch_independent(tiny_mlp):
    rng = np.random.default_rng(9)
    X = rng.normal(size=(7, 3))
    y = rng.integers(0, 2, size=7)
    full = per_example_last_layer_grads(tiny_mlp, X, y).matrix
    part = per_example_last_layer_grads(tiny_mlp, X[2:5], y[2:5]).matrix
    assert np.allclose(full[2:5], part)


def test_sgd_momentum_step_arithmetic():
    params = ModelParams({"w": np.array([1.0, 2.0])})
    g = {"w": np.array([0.5, -1.0])}
    sgd_momentum_step(params, g, lr=0.1, momentum=0.9)
    assert np.allclose(params.tensors["w"], [0.95, 2.1])
    sgd_momentum_step(params, g, lr=0.1, momentum=0.9)
    # v = 0.9 * g + g
    assert np.allclose(params.tensors["w"], [0.95 - 0.095, 2.1 + 0.19])


def test_sgd_momentum_zero_matches_plain_sgd():
    params = ModelParams({"w": np.array([1.0])})
    sgd_momentum_step(params, {"w": np.array([2.0])}, lr=0.25, momentum=0.0)
    assert params.tensors["w"][0] == pytest.approx(0.5)


def test_sgd_rejects_bad_arguments():
    params = ModelParams({"w": np.ones(1)})
    with pytest.raises(NdGradError):
        sgd_momentum_step(params, {"w": np.ones(1)}, lr=0.0, momentum=0.9)
    with pytest.raises(NdGradError):
        sgd_momentum_step(params, {"w": np.ones(1)}, lr=0.1, momentum=1.0)
    with pytest.raises(NdGradError):
        sgd_momentum_step(params, {"v": np.ones(1)}, lr=0.1, momentum=0.0)


def test_momentum_buffer_shape_is_checked():
    with pytest.raises(NdGradError):
        ModelParams({"w": np.ones(2)}, momentum={"w": np.ones(3)})


def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 0.025) == pytest.approx(0.025)
    assert cosine_lr(50, 100, 0.025) == pytest.approx(0.0125)
    assert cosine_lr(100, 100, 0.025) == pytest.approx(0.0, abs=1e-15)


def test_cosine_lr_is_non_increasing():
    lrs = [cosine_lr(t, 37, 1.0) for t in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_matmul_shape_error_names_dimensions():
    with pytest.raises(NdGradError, match="dimension mismatch"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_mlp_training_reduces_loss(small_blobs):
    d = small_blobs
    model = MLP.create(MLPGraph((d.n_features, 8, d.classes)), seed=0)
    before = model.loss_and_grads(d.X_train, d.y_train)[0]
    for _ in range(50):
        model.train_step(d.X_train, d.y_train, lr=0.1, momentum=0.9)
    assert model.loss_and_grads(d.X_train, d.y_train)[0] < before
