import math

import numpy as np
import pytest

from drivevqa import nn
from helpers import FD_TOL, check_layer_gradients, fd_gradient, rel_error

F64 = np.float64


# ---------------------------------------------------------------------------
# gradient checks against central finite differences (the oracle)

def run_with_projection(seed):
    """Project layer output onto a fixed random direction to get a scalar."""
    proj_rng = nn.make_rng(seed)
    proj_cache = {}

    def run(layer, x):
        y, cache = layer.forward(x)
        if y.shape not in proj_cache:
            proj_cache[y.shape] = proj_rng.standard_normal(y.shape)
        r = proj_cache[y.shape]
        loss = float((y * r).sum())

        def backward():
            return layer.backward(r.astype(y.dtype), cache)

        return loss, backward

    return run


@pytest.mark.parametrize("activation", ["linear", "relu", "tanh", "sigmoid"])
def test_dense_gradients(activation):
    worst = check_layer_gradients(
        make_layer=lambda rng: nn.Dense(5, 4, activation, rng=rng, dtype=F64),
        make_input=lambda rng: rng.uniform(-2, 2, size=(3, 5)),
        run=run_with_projection(seed=11),
        trials=25,
        seed=101,
    )
    assert worst < FD_TOL


@pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "valid"), (1, "same"), (2, "same")])
def test_conv2d_gradients(stride, padding):
    worst = check_layer_gradients(
        make_layer=lambda rng: nn.Conv2d(2, 3, ksize=3, stride=stride, padding=padding,
                                         activation="relu", rng=rng, dtype=F64),
        make_input=lambda rng: rng.uniform(-1, 1, size=(2, 2, 6, 6)),
        run=run_with_projection(seed=12),
        trials=25,
        seed=102,
    )
    assert worst < FD_TOL


def test_lstm_gradients():
    def run(layer, x):
        hs, (h, c), caches = layer.forward(x)
        loss = float(hs.sum() + (h * c).sum())

        def backward():
            dhs = np.ones_like(hs)
            dh_last = c.copy()
            dc_last = h.copy()
            dx, _, _ = layer.backward(dhs, caches, dh_last, dc_last)
            return dx

        return loss, backward

    worst = check_layer_gradients(
        make_layer=lambda rng: nn.LSTM(3, 4, rng=rng, dtype=F64),
        make_input=lambda rng: rng.uniform(-1, 1, size=(2, 3, 3)),
        run=run,
        trials=100,
        seed=103,
    )
    assert worst < FD_TOL


def test_embedding_gradients():
    ids = np.array([[0, 2, 1], [2, 2, 0]])
    rng = nn.make_rng(7)
    worst = 0.0
    for _ in range(100):
        layer = nn.Embedding(3, 4, rng=rng, dtype=F64)
        r = rng.standard_normal((2, 3, 4))
        vecs, cache = layer.forward(ids)
        layer.zero_grads()
        layer.backward(r, cache)
        analytic = layer.grads["W"].copy()

        def loss_at(w):
            saved = layer.params["W"].copy()
            layer.params["W"][...] = w
            out, _ = layer.forward(ids)
            layer.params["W"][...] = saved
            return float((out * r).sum())

        numeric = fd_gradient(loss_at, layer.params["W"])
        worst = max(worst, rel_error(analytic, numeric))
    assert worst < FD_TOL


def test_softmax_cross_entropy_gradient():
    rng = nn.make_rng(21)
    worst = 0.0
    for _ in range(100):
        logits = rng.uniform(-3, 3, size=(4, 6))
        targets = rng.integers(0, 6, size=4)
        analytic = nn.softmax_xent_grad(nn.softmax(logits), targets)

        def loss_at(lg):
            return nn.cross_entropy(nn.softmax(lg), targets)

        numeric = fd_gradient(loss_at, logits)
        worst = max(worst, rel_error(analytic, numeric))
    assert worst < FD_TOL


def test_dropout_backward_matches_frozen_mask():
    rng = nn.make_rng(3)
    x = rng.uniform(-1, 1, size=(50, 20))
    y, mask = nn.dropout(x, 0.4, train=True, rng=rng)
    dy = rng.standard_normal(y.shape)
    # with the mask frozen the op is elementwise linear, so the exact
    # gradient is the mask itself
    assert np.array_equal(nn.dropout_backward(dy, mask), dy * mask)


# ---------------------------------------------------------------------------
# closed-form spot checks

def test_dense_zero_params_tanh_gives_zeros():
    rng = nn.make_rng(0)
    layer = nn.Dense(6, 3, "tanh", rng=rng)
    layer.params["W"][...] = 0.0
    layer.params["b"][...] = 0.0
    y, _ = layer.forward(rng.uniform(-5, 5, size=(4, 6)).astype(np.float32))
    assert np.all(y == 0.0)


def test_dense_linear_grads_are_outer_product_sums():
    rng = nn.make_rng(5)
    layer = nn.Dense(3, 2, "linear", rng=rng, dtype=F64)
    x = rng.uniform(-1, 1, size=(4, 3))
    y, cache = layer.forward(x)
    layer.zero_grads()
    layer.backward(np.ones_like(y), cache)
    assert np.allclose(layer.grads["W"], x.T @ np.ones((4, 2)))
    assert np.allclose(layer.grads["b"], 4.0)


def test_zero_upstream_grad_gives_zero_grads():
    rng = nn.make_rng(6)
    layer = nn.Dense(3, 2, "tanh", rng=rng, dtype=F64)
    x = rng.uniform(-1, 1, size=(4, 3))
    y, cache = layer.forward(x)
    layer.zero_grads()
    dx = layer.backward(np.zeros_like(y), cache)
    assert np.all(dx == 0.0)
    assert all(np.all(g == 0.0) for g in layer.grads.values())


def test_conv2d_identity_kernel_reproduces_interior():
    rng = nn.make_rng(9)
    layer = nn.Conv2d(1, 1, ksize=3, stride=1, padding="valid", rng=rng, dtype=F64)
    layer.params["W"][...] = 0.0
    layer.params["W"][0, 0, 1, 1] = 1.0
    layer.params["b"][...] = 0.0
    x = rng.uniform(-1, 1, size=(1, 1, 7, 7))
    y, _ = layer.forward(x)
    assert np.allclose(y[0, 0], x[0, 0, 1:-1, 1:-1])


def test_lstm_closed_gates_give_near_zero_hidden():
    rng = nn.make_rng(10)
    layer = nn.LSTM(3, 4, rng=rng, dtype=F64)
    # saturate every gate shut: sigmoid(-30) ~ 1e-13
    layer.params["b"][...] = -30.0
    x = rng.uniform(-1, 1, size=(2, 5, 3))
    hs, (h, _), _ = layer.forward(x)
    assert np.max(np.abs(hs)) < 1e-9
    assert np.max(np.abs(h)) < 1e-9


def test_softmax_uniform_logits():
    p = nn.softmax(np.zeros((1, 7)))
    assert np.allclose(p, 1.0 / 7.0)


def test_softmax_shift_invariance():
    rng = nn.make_rng(13)
    logits = rng.uniform(-4, 4, size=(5, 9))
    p1 = nn.softmax(logits)
    p2 = nn.softmax(logits + 123.456)
    assert np.max(np.abs(p1 - p2)) < 1e-7
    assert np.allclose(p1.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_hand_computed_values():
    # exp(2), exp(1), exp(0.1) evaluated at high precision
    p = nn.softmax(np.array([[2.0, 1.0, 0.1]]))
    assert np.allclose(p, [[0.65900114, 0.24243297, 0.09856589]], atol=5e-5)


def test_cross_entropy_is_neg_log_prob():
    probs = np.array([[0.2, 0.5, 0.3]])
    assert math.isclose(nn.cross_entropy(probs, [1]), -math.log(0.5), rel_tol=1e-12)


def test_dropout_p0_and_eval_are_identity():
    rng = nn.make_rng(14)
    x = rng.uniform(-1, 1, size=(10, 10))
    for train in (True, False):
        y, _ = nn.dropout(x, 0.0, train=train, rng=rng)
        assert np.array_equal(y, x)
    y, _ = nn.dropout(x, 0.5, train=False, rng=rng)
    assert np.array_equal(y, x)


def test_dropout_zero_fraction_near_p():
    rng = nn.make_rng(15)
    x = np.ones(100_000)
    y, _ = nn.dropout(x, 0.5, train=True, rng=rng)
    frac = float((y == 0.0).mean())
    assert abs(frac - 0.5) < 0.01
    # survivors are scaled by 1/(1-p)
    assert np.allclose(y[y != 0.0], 2.0)


def test_dropout_rejects_p_one():
    with pytest.raises(ValueError):
        nn.dropout(np.ones(3), 1.0, train=True, rng=nn.make_rng(0))


def test_adam_zero_grad_keeps_params():
    p = np.array([1.0, -2.0, 3.0])
    state = {}
    nn.adam_step(p, np.zeros(3), state, lr=0.1)
    assert np.allclose(p, [1.0, -2.0, 3.0])


def test_adam_first_step_is_lr():
    p = np.array([0.0])
    nn.adam_step(p, np.array([1.0]), {}, lr=0.01)
    # bias-corrected m_hat = v_hat = 1 on the first step
    assert math.isclose(p[0], -0.01 * 1.0 / (1.0 + 1e-8), rel_tol=1e-9)


def test_adam_constant_grad_approaches_lr_sign():
    p = np.array([0.0])
    state = {}
    prev = 0.0
    for _ in range(500):
        prev = p[0]
        nn.adam_step(p, np.array([2.5]), state, lr=0.001)
    assert math.isclose(prev - p[0], 0.001, rel_tol=1e-3)


# ---------------------------------------------------------------------------
# structural properties

def test_forward_determinism_given_seed():
    def build():
        rng = nn.make_rng(42)
        layer = nn.Dense(8, 8, "tanh", rng=rng)
        x = rng.uniform(-1, 1, size=(4, 8)).astype(np.float32)
        y, _ = layer.forward(x)
        return y

    assert np.array_equal(build(), build())


def test_no_nan_inf_on_bounded_inputs():
    rng = nn.make_rng(16)
    x = rng.uniform(-10, 10, size=(8, 12)).astype(np.float32)
    for act in ("linear", "relu", "tanh", "sigmoid"):
        layer = nn.Dense(12, 6, act, rng=rng)
        y, cache = layer.forward(x)
        dx = layer.backward(np.ones_like(y), cache)
        assert np.all(np.isfinite(y)) and np.all(np.isfinite(dx))
    probs = nn.softmax(rng.uniform(-10, 10, size=(8, 50)))
    assert np.all(np.isfinite(probs))
    assert np.isfinite(nn.cross_entropy(probs, rng.integers(0, 50, size=8)))
    lstm = nn.LSTM(12, 6, rng=rng)
    hs, _, _ = lstm.forward(np.stack([x, x], axis=1))
    assert np.all(np.isfinite(hs))


def test_param_count_matches_analytic_sum():
    rng = nn.make_rng(17)
    layers = [
        nn.Conv2d(1, 8, 3, rng=rng),     # 8*1*9 + 8
        nn.Dense(100, 40, rng=rng),      # 100*40 + 40
        nn.LSTM(10, 20, rng=rng),        # 10*80 + 20*80 + 80
        nn.Embedding(30, 5, rng=rng),    # 150
    ]
    expected = (8 * 9 + 8) + (100 * 40 + 40) + (10 * 80 + 20 * 80 + 80) + 150
    assert nn.param_count(layers) == expected


def test_shape_mismatch_errors():
    rng = nn.make_rng(18)
    layer = nn.Dense(4, 2, rng=rng)
    with pytest.raises(nn.ShapeMismatch):
        layer.forward(np.zeros((3, 5), dtype=np.float32))
    y, cache = layer.forward(np.zeros((3, 4), dtype=np.float32))
    with pytest.raises(nn.ShapeMismatch):
        layer.backward(np.zeros((3, 3), dtype=np.float32), cache)
    with pytest.raises(nn.ShapeMismatch):
        nn.adam_step(np.zeros(3), np.zeros(4), {}, lr=0.1)


# ---------------------------------------------------------------------------
# checkpoint round trip

def test_checkpoint_bit_exact_round_trip(tmp_path):
    rng = nn.make_rng(19)
    arrays = {
        "actor/l1/W": rng.standard_normal((7, 3)).astype(np.float32),
        "actor/l1/b": rng.standard_normal(3).astype(np.float64),
        "meta/steps": np.array([123456789], dtype=np.int64),
    }
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, arrays)
    loaded = nn.load_checkpoint(path)
    assert set(loaded) == set(arrays)
    for key in arrays:
        assert loaded[key].dtype == arrays[key].dtype
        assert loaded[key].shape == arrays[key].shape
        assert arrays[key].tobytes() == loaded[key].tobytes()


def test_checkpoint_corrupt_files_raise(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE")
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(path)

    good = tmp_path / "good.ckpt"
    nn.save_checkpoint(good, {"w": np.ones(10, dtype=np.float32)})
    blob = good.read_bytes()
    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(blob[:-5])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(truncated)


def test_restore_params_round_trip(tmp_path):
    rng = nn.make_rng(20)
    layers = {"enc": nn.Dense(4, 3, rng=rng), "out": nn.Dense(3, 2, rng=rng)}
    path = tmp_path / "net.ckpt"
    nn.save_checkpoint(path, nn.collect_params(layers))

    rng2 = nn.make_rng(999)
    fresh = {"enc": nn.Dense(4, 3, rng=rng2), "out": nn.Dense(3, 2, rng=rng2)}
    nn.restore_params(fresh, nn.load_checkpoint(path))
    for name in layers:
        for pname in layers[name].params:
            assert np.array_equal(layers[name].params[pname], fresh[name].params[pname])
