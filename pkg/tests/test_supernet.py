import json
import math

import numpy as np
import pytest

from core.nn.ndgrad import Tensor, flatten_head_grads, per_example_last_layer_grads
from core.nn.supernet import (
    MAX_ENUMERABLE,
    AlphaParams,
    Architecture,
    SearchSpace,
    SearchSpaceError,
    Supernet,
    alpha_key,
    alpha_step,
    canonical_op,
    discretize_argmax,
    mixed_edge_output,
    nb201_toy,
    oracle_27,
    perturbation_scores,
    project,
    s4_toy,
    split_evenly,
    supernet_forward,
)
from core.utils.data_utils import BatchStream


def _randomize(net, seed):
    rng = np.random.default_rng(seed)
    for name in net.params.names():
        net.params.tensors[name] = rng.normal(0.0, 0.6, size=net.params.tensors[name].shape)
    net.alpha = AlphaParams([rng.normal(size=len(v)) for v in net.alpha.values])
    return net


def _loss(net, X, y):
    return net.gradients(X, y, wrt="theta")[0]


def test_builtin_spaces_shapes():
    space = SearchSpace.resolve("oracle-27")
    assert space.num_edges == 3
    assert space.num_architectures() == 27
    assert len(list(space.architectures())) == 27
    nb = SearchSpace.resolve("nb201-toy")
    assert (nb.nodes, nb.num_edges, len(nb.ops[0])) == (4, 6, 5)
    s4 = SearchSpace.resolve("s4-toy")
    assert all(ops == ("Linear", "Noise") for ops in s4.ops)


def test_large_space_is_not_enumerable():
    nb = SearchSpace.resolve("nb201-toy")
    assert nb.num_architectures() > MAX_ENUMERABLE
    with pytest.raises(SearchSpaceError):
        list(nb.architectures())


def test_unknown_space_and_op_rejected():
    with pytest.raises(SearchSpaceError):
        SearchSpace.resolve("cifar-full")
    with pytest.raises(SearchSpaceError):
        canonical_op("conv5x5")
    assert canonical_op("skip") == "Identity"


def test_space_json_round_trip(tmp_path):
    space = oracle_27()
    path = tmp_path / "space.json"
    path.write_text(json.dumps(space.to_dict()))
    assert SearchSpace.resolve(str(path)) == space


def test_architecture_pairs_round_trip():
    space = oracle_27()
    arch = Architecture(space, (2, 0, 1))
    assert arch.to_pairs() == [[0, 1, "LinearNonlin"], [0, 2, "Zero"], [1, 2, "Identity"]]
    assert Architecture.from_pairs(space, arch.to_pairs()) == arch
    assert arch.enumeration_index() == 2 * 9 + 0 * 3 + 1


def test_architecture_choice_out_of_range():
    with pytest.raises(SearchSpaceError):
        Architecture(oracle_27(), (3, 0, 0))


def test_mixed_edge_equal_logits_average_outputs():
    outs = [Tensor(np.full((2, 2), v)) for v in (1.0, 2.0, 6.0)]
    assert np.allclose(mixed_edge_output(np.zeros(3), outs).values, 3.0)


def test_mixed_edge_dominant_logit_selects_output():
    outs = [Tensor(np.full(2, v)) for v in (1.0, 5.0)]
    assert np.allclose(mixed_edge_output(np.array([0.0, 60.0]), outs).values, 5.0)


def test_mixed_edge_length_mismatch():
    with pytest.raises(SearchSpaceError, match="length mismatch"):
        mixed_edge_output(np.zeros(2), [Tensor(np.ones(2))] * 3)


def test_untrained_supernet_predicts_uniform(small_blobs):
    net = Supernet(oracle_27(), small_blobs.n_features, 2, seed=0)
    logits = supernet_forward(net, small_blobs.X_val).values
    assert np.array_equal(logits, np.zeros_like(logits))


def test_supernet_rejects_wrong_width():
    net = Supernet(oracle_27(), 3, 2, seed=0)
    with pytest.raises(SearchSpaceError, match="dimension"):
        net.logits(np.zeros((2, 4)))


def _central_difference(f, arr, idx, eps=1e-6):
    old = arr[idx]
    arr[idx] = old + eps
    hi = f()
    arr[idx] = old - eps
    lo = f()
    arr[idx] = old
    return (hi - lo) / (2 * eps)


@pytest.mark.parametrize("seed", range(20))
def test_theta_and_alpha_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = _randomize(Supernet(oracle_27(), 5, 2, seed=seed), seed)
    X = rng.normal(size=(6, 5))
    y = rng.integers(0, 2, size=6)
    _, g_theta = net.gradients(X, y, wrt="theta")
    _, g_alpha = net.gradients(X, y, wrt="alpha")

    checked = 0
    for name in net.params.names():
        arr = net.params.tensors[name]
        for idx in np.ndindex(*arr.shape):
            numeric = _central_difference(lambda: _loss(net, X, y), arr, idx)
            assert abs(g_theta[name][idx] - numeric) <= 1e-4 * max(abs(numeric), 1e-3)
            checked += 1
    for e, values in enumerate(net.alpha.values):
        for o in range(len(values)):
            numeric = _central_difference(lambda: _loss(net, X, y), values, o)
            assert abs(g_alpha[alpha_key(e)][o] - numeric) <= 1e-4 * max(abs(numeric), 1e-3)
            checked += 1
    assert checked >= 100


def test_per_example_head_grads_average_to_batch_grad():
    rng = np.random.default_rng(12)
    net = _randomize(Supernet(oracle_27(), 3, 2, seed=12), 12)
    X = rng.normal(size=(3, 3))
    y = np.array([0, 1, 1])
    G = per_example_last_layer_grads(net, X, y)
    _, grads = net.gradients(X, y, wrt="theta")
    batch = flatten_head_grads(grads, G.scope)
    assert np.allclose(G.matrix.mean(axis=0), batch, rtol=1e-10, atol=1e-14)



def test_alpha_step_zero_rate_is_identity(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=1), 1)
    before = net.alpha.copy()
    alpha_step(net, d.X_train[:10], d.y_train[:10], d.X_val, d.y_val, zeta=0.0, lr_alpha=0.0)
    for a, b in zip(before.values, net.alpha.values):
        assert np.array_equal(a, b)


def test_alpha_step_lowers_validation_loss(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=2), 2)
    before = net.gradients(d.X_val, d.y_val, wrt="alpha")[0]
    alpha_step(net, d.X_train[:10], d.y_train[:10], d.X_val, d.y_val, zeta=0.0, lr_alpha=1e-3)
    assert net.gradients(d.X_val, d.y_val, wrt="alpha")[0] < before


def test_alpha_step_with_lookahead_does_not_touch_theta(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=3), 3)
    theta = {k: v.copy() for k, v in net.params.tensors.items()}
    alpha_step(net, d.X_train[:10], d.y_train[:10], d.X_val, d.y_val, zeta=0.05, lr_alpha=0.1)
    for k, v in theta.items():
        assert np.array_equal(net.params.tensors[k], v)


def test_alpha_step_rejects_empty_subset(small_blobs):
    d = small_blobs
    net = Supernet(oracle_27(), d.n_features, 2)
    with pytest.raises(SearchSpaceError):
        alpha_step(net, d.X_train[:0], d.y_train[:0], d.X_val, d.y_val, 0.0, 0.1)


def test_discretize_argmax_ties_take_lowest_index():
    space = oracle_27()
    alpha = AlphaParams([np.array([0.1, 0.5, 0.2]), np.array([1.0, 1.0, 0.0]), np.zeros(3)])
    assert discretize_argmax(alpha, space).choices == (1, 0, 0)


def test_perturbation_scores_singleton_and_inactive(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=4), 4)
    net.fix_edge(0, 2)
    scores = perturbation_scores(net, d.X_val, d.y_val, 0)
    assert scores[2] == 0.0
    assert np.isneginf(scores[0]) and np.isneginf(scores[1])


def test_perturbation_scores_are_accuracy_drops(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=5), 5)
    base = net.accuracy(d.X_val, d.y_val)
    scores = perturbation_scores(net, d.X_val, d.y_val, 1)
    for o in range(3):
        with net.masked(1, o):
            assert scores[o] == pytest.approx(base - net.accuracy(d.X_val, d.y_val))
    assert np.array_equal(scores, perturbation_scores(net, d.X_val, d.y_val, 1, workers=3))


def test_masked_restores_mask_and_rejects_last_op():
    net = Supernet(oracle_27(), 3, 2)
    with net.masked(0, 1):
        assert list(net.active_ops(0)) == [0, 2]
    assert list(net.active_ops(0)) == [0, 1, 2]
    net.fix_edge(0, 1)
    with pytest.raises(SearchSpaceError):
        with net.masked(0, 1):
            pass


def test_masked_noise_keeps_stream_aligned():
    space = s4_toy()
    a = Supernet(space, 3, 2, seed=0, noise_seed=9)
    b = Supernet(space, 3, 2, seed=0, noise_seed=9)
    b.fix_edge(0, 0)
    X = np.ones((2, 3))
    a.forward(X)
    b.forward(X)
    assert np.array_equal(a.noise_rng.random(3), b.noise_rng.random(3))


def test_split_evenly():
    assert split_evenly(10, 3) == [4, 3, 3]
    assert split_evenly(0, 2) == [0, 0]
    assert split_evenly(5, 0) == []


def test_project_decides_every_edge_and_counts_examples(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=6), 6)
    seen = []
    arch = project(net, d.X_val, d.y_val, d.X_train, d.y_train, tune_epochs=1, batch_size=8,
                   lr=0.01, momentum=0.9, rng=np.random.default_rng(0), on_examples=seen.append)
    assert all(net.is_decided(e) for e in range(3))
    assert arch == net.architecture()
    assert sum(seen) == len(d.y_train)


def test_project_is_deterministic(small_blobs):
    d = small_blobs

    def run():
        net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=7), 7)
        return project(net, d.X_val, d.y_val, d.X_train, d.y_train, 1, 8, 0.01, 0.9,
                       np.random.default_rng(3))

    assert run() == run()


def test_mixing_weights_for_log_three():
    alpha = AlphaParams([np.array([np.log(3.0), 0.0])])
    assert np.allclose(alpha.weights(0), [0.75, 0.25], rtol=1e-12, atol=0)


@pytest.mark.parametrize("c", [-7.5, 3.0, 250.0])
def test_mixed_edge_is_shift_invariant(c):
    rng = np.random.default_rng(21)
    outs = [Tensor(rng.uniform(0.5, 2.0, size=(4, 3))) for _ in range(3)]
    alpha = rng.normal(size=3)
    base = mixed_edge_output(alpha, outs).values
    assert np.allclose(mixed_edge_output(alpha + c, outs).values, base, rtol=1e-12, atol=0)


def test_discretize_argmax_is_shift_invariant():
    space = nb201_toy()
    rng = np.random.default_rng(22)
    for _ in range(20):
        alpha = AlphaParams([rng.normal(size=len(ops)) for ops in space.ops])
        c = float(rng.uniform(-100.0, 100.0))
        shifted = AlphaParams([v + c for v in alpha.values])
        assert discretize_argmax(shifted, space) == discretize_argmax(alpha, space)


def test_edge_weights_stay_normalised_after_alpha_steps(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=9), 9)
    for _ in range(5):
        alpha_step(net, d.X_train[:10], d.y_train[:10], d.X_val, d.y_val, zeta=0.01, lr_alpha=5.0)
        for e in range(net.space.num_edges):
            assert abs(net.alpha.weights(e).sum() - 1.0) <= 1e-12


def test_identity_chain_passes_input_through():
    space = SearchSpace("pass", 3, ((0, 1), (1, 2)), (("Identity",), ("Identity",)))
    net = Supernet(space, 3, 3, seed=0)
    net.params.tensors["head.W"] = np.eye(3)
    X = np.random.default_rng(2).normal(size=(5, 3))
    assert np.array_equal(net.logits(X), X)


def _softmax(a):
    z = np.exp(a - a.max())
    return z / z.sum()


def test_cell_forward_matches_hand_unrolled_dag():
    net = _randomize(Supernet(oracle_27(), 3, 2, seed=13), 13)
    t = net.params.tensors
    a = net.alpha.values
    X = np.random.default_rng(14).normal(size=(4, 3))

    def edge(e, x):
        w = _softmax(a[e])
        nonlin = np.tanh(x @ t[f"e{e}.LinearNonlin.W"] + t[f"e{e}.LinearNonlin.b"])
        return w[0] * 0.0 + w[1] * x + w[2] * nonlin

    node1 = edge(0, X)
    node2 = edge(1, X) + edge(2, node1)
    expected = node2 @ t["head.W"] + t["head.b"]
    assert np.allclose(net.logits(X), expected, rtol=1e-12, atol=1e-12)


def test_noise_forward_is_bit_identical_for_equal_seeds():
    X = np.random.default_rng(15).normal(size=(6, 3))
    net = _randomize(Supernet(s4_toy(), 3, 2, seed=4), 4)
    first = supernet_forward(net, X, rng=np.random.default_rng(11)).values
    second = supernet_forward(net, X, rng=np.random.default_rng(11)).values
    assert np.array_equal(first, second)
    a = _randomize(Supernet(s4_toy(), 3, 2, seed=4, noise_seed=6), 4)
    b = _randomize(Supernet(s4_toy(), 3, 2, seed=4, noise_seed=6), 4)
    assert np.array_equal(a.forward(X).values, b.forward(X).values)


def _two_path_instance(alpha):
    """One edge {Linear, LinearNonlin}; class 1 is predicted when the mixed feature is positive.

    Linear passes x0 through, LinearNonlin passes tanh(x1). On the 20 points below
    the mixture is right on 18, x0 alone on 17 and tanh(x1) alone on 12.
    """
    space = SearchSpace("two-path", 2, ((0, 1),), (("Linear", "LinearNonlin"),))
    net = Supernet(space, 2, 2, seed=0)
    net.params.tensors["e0.Linear.W"] = np.array([[1.0, 0.0], [0.0, 0.0]])
    net.params.tensors["e0.LinearNonlin.W"] = np.array([[0.0, 0.0], [1.0, 0.0]])
    net.params.tensors["head.W"] = np.array([[0.0, 1.0], [0.0, 0.0]])
    net.alpha = AlphaParams([np.array(alpha, dtype=np.float64)])
    X = np.array([[1.0, 1.0]] * 9 + [[2.0, -1.0]] * 6 + [[0.5, -2.0]] * 2 + [[-0.5, 2.0]] * 3)
    y = np.ones(20, dtype=np.int64)
    return net, X, y


def test_perturbation_scores_on_constructed_edge():
    net, X, y = _two_path_instance((0.0, 0.0))
    assert net.accuracy(X, y) == pytest.approx(0.9)
    scores = perturbation_scores(net, X, y, 0)
    assert scores == pytest.approx([0.3, 0.05])
    arch = project(net, X, y, X, y, tune_epochs=0, batch_size=4, lr=0.1, momentum=0.0,
                   rng=np.random.default_rng(0))
    assert arch.choices == (0,)


def test_masking_a_zero_weight_op_scores_zero():
    net, X, y = _two_path_instance((0.0, -800.0))
    assert perturbation_scores(net, X, y, 0)[1] == 0.0


def test_project_keeps_best_score_even_against_alpha():
    net, X, y = _two_path_instance((-60.0, 60.0))
    assert discretize_argmax(net.alpha, net.space).choices == (1,)
    scores = perturbation_scores(net, X, y, 0)
    assert scores[0] == 0.0
    assert scores[1] == pytest.approx(-0.25)
    arch = project(net, X, y, X, y, tune_epochs=0, batch_size=4, lr=0.1, momentum=0.0,
                   rng=np.random.default_rng(0))
    assert arch.choices == (0,)


def test_project_without_tuning_on_one_edge_is_score_argmax(small_blobs):
    d = small_blobs
    space = SearchSpace("one-edge", 2, ((0, 1),), (("Zero", "Identity", "LinearNonlin"),))
    net = _randomize(Supernet(space, d.n_features, 2, seed=16), 16)
    scores = perturbation_scores(net.copy(), d.X_val, d.y_val, 0)
    arch = project(net, d.X_val, d.y_val, d.X_train, d.y_train, 0, 8, 0.01, 0.9,
                   np.random.default_rng(0))
    assert arch.choices == (int(np.argmax(scores)),)


def _replay_projection(net, X_V, y_V, tune_X, tune_y, tune_epochs, batch_size, lr, momentum, rng):
    stream = BatchStream(np.arange(len(tune_y)), batch_size, rng)
    total = int(round(tune_epochs * math.ceil(len(tune_y) / batch_size)))
    edges = net.space.num_edges
    choices = []
    for e in range(edges):
        base = net.accuracy(X_V, y_V)
        drops = []
        for o in range(len(net.space.ops[e])):
            with net.masked(e, o):
                drops.append(base - net.accuracy(X_V, y_V))
        choice = drops.index(max(drops))
        net.fix_edge(e, choice)
        choices.append(choice)
        for _ in range(total // edges + (1 if e < total % edges else 0)):
            idx = stream.next_batch()
            net.theta_step(tune_X[idx], tune_y[idx], lr, momentum)
    return tuple(choices)


def test_project_matches_edge_by_edge_replay(small_blobs):
    d = small_blobs
    net = _randomize(Supernet(oracle_27(), d.n_features, 2, seed=8), 8)
    twin = net.copy()
    arch = project(net, d.X_val, d.y_val, d.X_train, d.y_train, 2, 8, 0.05, 0.9,
                   np.random.default_rng(5))
    expected = _replay_projection(twin, d.X_val, d.y_val, d.X_train, d.y_train, 2, 8, 0.05, 0.9,
                                  np.random.default_rng(5))
    assert arch.choices == expected
    for name in net.params.names():
        assert np.array_equal(net.params.tensors[name], twin.params.tensors[name])
