import json

import numpy as np
import pytest

from deepfolio import nn
from deepfolio.nn import tensor as T
from deepfolio.nn import checkpoint
from deepfolio.nn.tensor import Tensor

from helpers import central_diff, rel_err


def _check_module_grads(build_loss, params: dict[str, Tensor], tol=1e-4):
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    nn.backward(loss)
    for name, p in params.items():
        numeric = central_diff(lambda: build_loss().item(), p.data)
        assert rel_err(p.grad, numeric, floor=1e-6) < tol, name


def test_dense_zero_weights_gives_zero():
    layer = nn.Dense(3, 2, np.random.default_rng(0))
    layer.W.data[:] = 0
    out = layer(Tensor(np.ones((4, 3))))
    assert np.all(out.data == 0)


def test_softmax_symmetric():
    out = T.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_lstm_cell_zero_params_zero_state():
    cell = nn.LSTMCell(3, 4, np.random.default_rng(0))
    for p in cell.parameters().values():
        p.data[:] = 0
    h, c = cell(Tensor(np.random.default_rng(1).normal(size=(2, 3))), Tensor(np.zeros((2, 4))),
                Tensor(np.zeros((2, 4))))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_fused_lstm_matches_cell_unrolled():
    rng = np.random.default_rng(3)
    seq = nn.LSTM(3, 5, rng)
    cell = nn.LSTMCell(3, 5, rng)
    cell.load_state_dict(seq.state_dict())
    x = rng.normal(size=(2, 6, 3))
    fused = seq(Tensor(x)).data
    h = Tensor(np.zeros((2, 5)))
    c = Tensor(np.zeros((2, 5)))
    for t in range(6):
        h, c = cell(Tensor(x[:, t]), h, c)
        np.testing.assert_allclose(fused[:, t], h.data, atol=1e-14)


def test_linear_backward():
    x = np.array([1.0, 2.0, 3.0])
    W = Tensor(np.ones((3, 2)), requires_grad=True)
    nn.backward((Tensor(x) @ W).sum())
    np.testing.assert_allclose(W.grad, np.repeat(x[:, None], 2, axis=1))


def test_backward_accumulates():
    W = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
    x = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
    nn.backward(T.tanh(x @ W).sum())
    once = W.grad.copy()
    nn.backward(T.tanh(x @ W).sum())
    np.testing.assert_allclose(W.grad, 2 * once)


def test_backward_requires_scalar():
    W = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(nn.ShapeError):
        nn.backward(W @ W)


def test_non_finite_raises():
    with pytest.raises(nn.NonFiniteError):
        T.log(Tensor([-1.0]))


def test_shape_mismatch_raises():
    layer = nn.Dense(3, 2, np.random.default_rng(0))
    with pytest.raises(nn.ShapeError):
        layer(Tensor(np.ones((1, 4))))


@pytest.mark.parametrize("seed", range(5))
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=10, size=(7, 9))
    out = T.softmax(Tensor(x)).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert nn.Dropout(0.5)(x, train=False) is x
    assert nn.Dropout(1.0)(x, rng=np.random.default_rng(0), train=True) is x


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(11)
        net = nn.BiLSTM(4, 3, rng)
        drop = nn.Dropout(0.5)
        x = Tensor(rng.normal(size=(2, 5, 4)))
        return drop(net(x), rng=rng, train=True).data
    assert np.array_equal(run(), run())


# --- optimizers --------------------------------------------------------------

@pytest.mark.parametrize("kind", ["sgd", "adam", "rmsprop"])
def test_zero_gradient_keeps_params(kind):
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = nn.make_optimizer(kind, {"p": p}, lr=0.1)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_sgd_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad[:] = 2.0
    nn.SGD({"p": p}, lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.8])


def test_adam_first_step():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad[:] = 1.0
    nn.Adam({"p": p}, lr=0.001).step()
    np.testing.assert_allclose(p.data, [-0.001 / (1 + 1e-8)], rtol=1e-15)


def test_rmsprop_first_step():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad[:] = 1.0
    nn.RMSProp({"p": p}, lr=0.01).step()
    # v = 0.1 after one step with decay 0.9
    np.testing.assert_allclose(p.data, [-0.01 / (np.sqrt(0.1) + 1e-8)])


def test_global_norm_clip():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad[:] = [30.0, 40.0]
    nn.SGD({"p": p}, lr=1.0, clip_norm=5.0).step()
    np.testing.assert_allclose(p.data, [-3.0, -4.0])


def test_optimizer_shape_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(nn.ShapeError):
        nn.SGD({"p": p}, lr=1.0).step({"p": np.zeros(3)})


# --- losses --------------------------------------------------------------------

def test_mse_zero_at_target():
    v, g = nn.losses("mse", [1.0, 2.0], [1.0, 2.0])
    assert v == 0 and np.all(g == 0)


def test_log_loss_symmetric():
    v, _ = nn.losses("binary_log_loss", np.full(4, 0.5), np.full(4, 0.5))
    assert v == pytest.approx(np.log(2), abs=1e-15)


@pytest.mark.parametrize("kind", ["mse", "binary_log_loss"])
def test_loss_gradients_vs_fd(kind):
    rng = np.random.default_rng(5)
    pred = rng.uniform(0.05, 0.95, size=(4, 3))
    target = rng.uniform(0, 1, size=(4, 3))
    _, g = nn.losses(kind, pred, target)
    numeric = central_diff(lambda: nn.losses(kind, pred, target)[0], pred)
    assert rel_err(g, numeric, floor=1e-6) < 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.losses("mse", np.zeros(2), np.zeros(3))


# --- finite-difference gradient checks per layer kind -------------------------

def _layer_cases(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(3, 4, 6))
    cases = {}

    dense = nn.Dense(5, 6, rng)
    cases["dense"] = (dense, lambda: (dense(Tensor(x)) * w).sum())

    cell = nn.LSTMCell(5, 6, rng)
    h0, c0 = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    cases["lstm_cell"] = (cell, lambda: (cell(Tensor(x[:, 0]), Tensor(h0), Tensor(c0))[0] * w[:, 0]).sum())

    bi = nn.BiLSTM(5, 3, rng)
    cases["bidirectional_lstm"] = (bi, lambda: (bi(Tensor(x)) * w).sum())

    for kind in ("tanh", "sigmoid", "leaky_relu", "softmax"):
        lin = nn.Dense(5, 6, rng)
        act = nn.Activation(kind)
        cases[kind] = (lin, lambda lin=lin, act=act: (act(lin(Tensor(x))) * w).sum())

    lin = nn.Dense(5, 6, rng)
    drop = nn.Dropout(0.5)
    mask_seed = seed + 1000
    cases["dropout"] = (lin, lambda: (drop(lin(Tensor(x)), rng=np.random.default_rng(mask_seed), train=True) * w).sum())

    head = nn.Dense(5, 6, rng)
    target = rng.uniform(size=(3, 4, 6))
    cases["mse"] = (head, lambda: nn.mse(head(Tensor(x)), target))
    head2 = nn.Dense(5, 6, rng)
    cases["binary_log_loss"] = (head2, lambda: nn.binary_log_loss(T.sigmoid(head2(Tensor(x))), target))
    return cases


@pytest.mark.parametrize("seed", range(3))
def test_every_layer_gradient_matches_fd(seed):
    for name, (module, build) in _layer_cases(seed).items():
        _check_module_grads(build, module.parameters())


def test_input_gradient_through_bilstm():
    rng = np.random.default_rng(9)
    bi = nn.BiLSTM(2, 3, rng)
    x = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)
    w = rng.normal(size=(2, 4, 6))
    nn.backward((bi(x) * w).sum())
    numeric = central_diff(lambda: (bi(Tensor(x.data)) * w).sum().item(), x.data)
    assert rel_err(x.grad, numeric, floor=1e-6) < 1e-4


# --- checkpoints ------------------------------------------------------------

def test_checkpoint_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(2)
    net = nn.BiLSTM(3, 4, rng)
    for p in net.parameters().values():
        p.data = rng.normal(size=p.shape) * np.exp(rng.normal(size=p.shape) * 10)
    path = tmp_path / "ck.json"
    checkpoint.save(path, net.state_dict())
    state, _ = checkpoint.load(path)
    for k, v in net.state_dict().items():
        assert np.array_equal(state[k], v)
    doc = json.loads(path.read_text())
    assert {"name", "shape", "values"} <= set(doc["params"][0])
