import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrononet.tensornet import (
    Adam,
    DAdaptSGD,
    DenseLayer,
    SGDMomentum,
    TrainingError,
    backward,
    forward,
    grads_as_list,
    layer_params,
    load_network,
    make_optimizer,
    save_network,
    xavier_init,
)


def numeric_grad(loss_fn, arr, h=1e-5):
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_fn()
        arr[idx] = orig - h
        down = loss_fn()
        arr[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def rel_err(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return np.max(np.abs(a - b) / scale)


def random_net(rng, dims, last_identity=True):
    layers = []
    for k in range(len(dims) - 1):
        act = "identity" if (last_identity and k == len(dims) - 2) else "tanh"
        layers.append(xavier_init(dims[k], dims[k + 1], rng, act))
    return layers


# --- forward -----------------------------------------------------------------


def test_forward_identity_layer_passes_input_through():
    layer = DenseLayer(np.eye(3), np.zeros(3), "identity")
    x = np.arange(6.0).reshape(2, 3)
    acts = forward([layer], x)
    np.testing.assert_array_equal(acts[-1], x)
    assert len(acts) == 2


def test_forward_zero_weights_tanh_gives_zeros():
    layer = DenseLayer(np.zeros((4, 3)), np.zeros(4), "tanh")
    acts = forward([layer], np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(acts[-1], np.zeros((5, 4)))


def test_forward_shapes_and_errors():
    rng = np.random.default_rng(1)
    layers = random_net(rng, [6, 4, 2])
    acts = forward(layers, rng.normal(size=(7, 6)))
    assert [a.shape for a in acts] == [(7, 6), (7, 4), (7, 2)]
    with pytest.raises(ValueError, match="in_dim"):
        forward(layers, rng.normal(size=(7, 5)))


# --- backward ----------------------------------------------------------------


def test_backward_identity_sum_loss_hand_derived():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    layer = DenseLayer(rng.normal(size=(2, 3)), np.zeros(2), "identity")
    acts = forward([layer], x)
    grads = backward([layer], acts, np.ones_like(acts[-1]))
    np.testing.assert_allclose(grads.weights[0], np.ones((5, 2)).T @ x)
    np.testing.assert_allclose(grads.biases[0], 5.0 * np.ones(2))


def test_backward_zero_gradient_gives_zero():
    rng = np.random.default_rng(3)
    layers = random_net(rng, [4, 3, 2])
    acts = forward(layers, rng.normal(size=(6, 4)))
    grads = backward(layers, acts, np.zeros_like(acts[-1]))
    for w, b in zip(grads.weights, grads.biases):
        assert not w.any() and not b.any()


def test_backward_does_not_mutate_layers():
    rng = np.random.default_rng(4)
    layers = random_net(rng, [4, 3])
    snapshot = [l.weights.copy() for l in layers]
    acts = forward(layers, rng.normal(size=(5, 4)))
    backward(layers, acts, rng.normal(size=(5, 3)))
    for layer, before in zip(layers, snapshot):
        np.testing.assert_array_equal(layer.weights, before)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("loss_kind", ["sum", "mse", "l1"])
def test_gradcheck_small_networks(seed, loss_kind):
    rng = np.random.default_rng(100 + seed)
    n_layers = int(rng.integers(1, 4))
    dims = list(rng.integers(2, 9, size=n_layers + 1))
    layers = random_net(rng, dims)
    x = rng.normal(size=(5, dims[0]))
    # target offset bounded away from 0 keeps l1 away from its kink
    target = forward(layers, x)[-1] + rng.uniform(0.2, 1.0, size=(5, dims[-1]))

    def loss():
        out = forward(layers, x)[-1]
        if loss_kind == "sum":
            return out.sum()
        if loss_kind == "mse":
            return ((out - target) ** 2).sum()
        return np.abs(out - target).sum()

    acts = forward(layers, x)
    out = acts[-1]
    if loss_kind == "sum":
        d_out = np.ones_like(out)
    elif loss_kind == "mse":
        d_out = 2.0 * (out - target)
    else:
        d_out = np.sign(out - target)
    grads = backward(layers, acts, d_out)
    for layer, dw, db in zip(layers, grads.weights, grads.biases):
        assert rel_err(dw, numeric_grad(loss, layer.weights)) < 1e-5
        assert rel_err(db, numeric_grad(loss, layer.biases)) < 1e-5


def test_backward_shape_mismatch():
    rng = np.random.default_rng(5)
    layers = random_net(rng, [4, 2])
    acts = forward(layers, rng.normal(size=(3, 4)))
    with pytest.raises(ValueError, match="output_gradient"):
        backward(layers, acts, np.ones((3, 5)))


# --- xavier_init -------------------------------------------------------------


def test_xavier_bounds():
    layer = xavier_init(8, 2, seed=0)
    bound = np.sqrt(6.0 / 10.0)
    assert np.all(np.abs(layer.weights) <= bound)
    assert not layer.biases.any()
    tiny = xavier_init(1, 1, seed=0)
    assert abs(tiny.weights[0, 0]) <= np.sqrt(3.0)


def test_xavier_deterministic():
    a = xavier_init(5, 3, seed=42)
    b = xavier_init(5, 3, seed=42)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_xavier_rejects_bad_dims():
    with pytest.raises(ValueError):
        xavier_init(0, 3, seed=1)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_xavier_bound_property(in_dim, out_dim, seed):
    layer = xavier_init(in_dim, out_dim, seed)
    assert np.all(np.abs(layer.weights) <= np.sqrt(6.0 / (in_dim + out_dim)))


# --- optimizers --------------------------------------------------------------


def test_sgd_momentum_hand_example():
    p = np.array([1.0])
    opt = SGDMomentum([p], learning_rate=0.1, momentum=0.85)
    opt.step([np.array([1.0])])
    assert opt.velocity[0] == pytest.approx([1.0])
    assert p == pytest.approx([0.9])
    # second step: v = 0.85 + 1 = 1.85, p = 0.9 - 0.185
    opt.step([np.array([1.0])])
    assert p == pytest.approx([0.715])


def test_sgd_zero_gradient_noop():
    p = np.array([1.0, -2.0])
    SGDMomentum([p]).step([np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step():
    p = np.array([1.0])
    Adam([p]).step([np.array([1.0])])
    assert p == pytest.approx([1.0 - 0.001 / (1.0 + 1e-8)], abs=1e-12)


def test_dadapt_distance_non_decreasing():
    rng = np.random.default_rng(7)
    p = rng.normal(size=10)
    opt = DAdaptSGD([p])
    history = [opt.d]
    for _ in range(50):
        opt.step([rng.normal(size=10)])
        history.append(opt.d)
    assert all(b >= a for a, b in zip(history, history[1:]))
    assert opt.d > 0


def test_dadapt_grows_on_consistent_gradients():
    # constant gradient direction: d should quickly leave its 1e-6 floor
    p = np.array([100.0])
    opt = DAdaptSGD([p])
    for _ in range(40):
        opt.step([np.array([1.0])])
    assert opt.d > 1e-3


def test_optimizer_rejects_non_finite():
    p = np.array([1.0])
    with pytest.raises(TrainingError):
        SGDMomentum([p]).step([np.array([np.nan])])
    with pytest.raises(TrainingError):
        Adam([p]).step([np.array([np.inf])])


def test_make_optimizer_kinds():
    p = [np.zeros(3)]
    assert isinstance(make_optimizer("sgd", p), SGDMomentum)
    assert isinstance(make_optimizer("adam", p), Adam)
    assert isinstance(make_optimizer("dadapt", p), DAdaptSGD)
    with pytest.raises(ValueError, match="unknown optimizer"):
        make_optimizer("lbfgs", p)


@pytest.mark.parametrize("kind", ["sgd", "adam", "dadapt"])
def test_training_trajectory_deterministic(kind):
    def run():
        rng = np.random.default_rng(11)
        layers = random_net(rng, [6, 4, 2])
        x = rng.normal(size=(8, 6))
        opt = make_optimizer(kind, layer_params(layers))
        for _ in range(5):
            acts = forward(layers, x)
            grads = backward(layers, acts, 2.0 * (acts[-1] - 1.0))
            opt.step(grads_as_list(grads))
        return [l.weights.copy() for l in layers]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    layers = random_net(rng, [5, 3, 2])
    path = tmp_path / "net.ckpt"
    save_network(layers, path, seed=99)
    loaded, seed = load_network(path)
    assert seed == 99
    assert [l.activation for l in loaded] == [l.activation for l in layers]
    for a, b in zip(loaded, layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.biases, b.biases)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(ValueError, match="magic"):
        load_network(path)
