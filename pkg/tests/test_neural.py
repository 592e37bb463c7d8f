import numpy as np
import pytest
from hypothesis import given, strategies as st

from contactcast.neural.checkpoint import load_into, save_layers
from contactcast.neural.gradcheck import (TOLERANCE, check_layer, graph_stream_check, layer_cases,
                                          numeric_grad, predictor_checks, relative_error)
from contactcast.neural.layers import (BackwardBeforeForwardError, Conv2D, Dense, GcnLayer, LstmCell,
                                       conv_output_size)
from contactcast.neural.losses import softmax, softmax_cross_entropy
from contactcast.neural.optim import Adam, AdamState, adam_step
from contactcast.neural.predictors import PredictorConfig, build_cam_predictor, build_nao_predictor
from contactcast.numerics import SeededRng, ShapeError


def test_gcn_identity_propagation():
    layer = GcnLayer(3, 3, "linear")
    layer.params["W"] = np.eye(3)
    h = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(layer.forward(h, np.eye(4)), h)


def test_gcn_two_node_average():
    layer = GcnLayer(2, 2, "linear")
    layer.params["W"] = np.eye(2)
    out = layer.forward(np.array([[2.0, 0.0], [0.0, 4.0]]), np.full((2, 2), 0.5))
    assert np.array_equal(out, [[1.0, 2.0], [1.0, 2.0]])


def test_gcn_sparse_adjacency_matches_dense():
    from scipy import sparse

    rng = SeededRng(0)
    layer = GcnLayer(3, 2, "relu", rng)
    adj = rng.random((5, 5))
    h = rng.normal(0, 1, (5, 3))
    dense_out = layer.forward(h, adj)
    dx = layer.backward(np.ones((5, 2)))
    assert np.allclose(layer.forward(h, sparse.csr_matrix(adj)), dense_out)
    assert np.allclose(layer.backward(np.ones((5, 2))), dx)
    with pytest.raises(ShapeError):
        layer.forward(h, np.eye(4))


def test_lstm_zero_fixed_point():
    cell = LstmCell(3, 4)
    h = cell.forward(np.random.default_rng(0).normal(size=(5, 2, 3)))
    assert np.array_equal(h, np.zeros((2, 4)))


def test_lstm_left_padding_is_transparent():
    cell = LstmCell(2, 3, SeededRng(1))
    xs = SeededRng(2).normal(0, 1, (3, 1, 2))
    padded = np.concatenate([np.full((2, 1, 2), 9.0), xs])
    mask = np.array([[0.0], [0.0], [1.0], [1.0], [1.0]])
    assert np.allclose(cell.forward(padded, mask), cell.forward(xs))


def test_dense_linear_weight_gradient_closed_form():
    rng = SeededRng(3)
    layer = Dense(4, 3, "linear", rng)
    x = rng.normal(0, 1, (5, 4))
    dy = rng.normal(0, 1, (5, 3))
    layer.forward(x)
    layer.backward(dy)
    assert np.array_equal(layer.grads["W"], dy.T @ x)


@pytest.mark.parametrize("layer", [Dense(2, 2), Conv2D(1, 1, 3), GcnLayer(2, 2), LstmCell(2, 2)])
def test_backward_before_forward(layer):
    with pytest.raises(BackwardBeforeForwardError):
        layer.backward(np.zeros((1, 2)))


@pytest.mark.parametrize("name", sorted(layer_cases()))
def test_layer_gradients(name):
    for seed in range(3):
        rng = SeededRng(seed).split(name)
        layer, inputs = layer_cases()[name](rng)
        errs = check_layer(layer, inputs, rng)
        assert max(errs.values()) <= TOLERANCE, errs


def test_model_gradients():
    for part in (graph_stream_check(0), predictor_checks(0)):
        for name, err in part.items():
            assert err <= TOLERANCE, name


def test_relative_error_properties():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(a, -a) == pytest.approx(1.0)


def test_conv_output_size():
    assert conv_output_size(7, 3, 1, 1) == 7
    assert conv_output_size(7, 3, 2, 1) == 4


def test_softmax_cross_entropy_examples():
    loss, _ = softmax_cross_entropy(np.zeros(5), 2)
    assert loss == pytest.approx(np.log(5))
    assert softmax_cross_entropy(np.array([10.0, -10.0]), 0)[0] <= 1e-4
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(3), 3)
    assert np.allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])


@given(st.integers(0, 2 ** 31))
def test_softmax_cross_entropy_gradient(seed):
    z = np.random.default_rng(seed).normal(0, 2, 6)
    label = seed % 6
    _, g = softmax_cross_entropy(z, label)
    num = numeric_grad(lambda: softmax_cross_entropy(z, label)[0], z)
    assert np.max(np.abs(g - num)) <= 1e-6


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    out = adam_step(AdamState(lr=0.1), p, {"w": np.zeros(2)})
    assert np.array_equal(out["w"], p["w"])


def test_adam_first_step_moves_by_lr():
    out = adam_step(AdamState(lr=0.01), {"w": np.array([3.0])}, {"w": np.array([1.0])})
    assert out["w"][0] == pytest.approx(3.0 - 0.01, abs=1e-9)


def test_adam_weight_decay_is_multiplicative():
    out = adam_step(AdamState(lr=0.01, weight_decay=0.5), {"w": np.array([3.0])}, {"w": np.array([0.0])})
    assert out["w"][0] == 1.5


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


def _train(seed, steps=50, lr=1e-3):
    rng = SeededRng(seed)
    layer = Dense(4, 3, "tanh", rng.split("w"))
    x = rng.normal(0, 1, (16, 4))
    y = rng.integers(0, 3, 16)
    opt = Adam([layer], lr=lr)
    losses = []
    for _ in range(steps):
        loss, g = softmax_cross_entropy(layer.forward(x), y)
        layer.backward(g)
        opt.step()
        losses.append(loss)
    return losses, layer.params["W"].copy()


def test_adam_training_is_reproducible_and_descends():
    a, wa = _train(0)
    b, wb = _train(0)
    assert a == b and np.array_equal(wa, wb)
    ok = sum(all(np.diff(_train(s)[0]) <= 1e-12) for s in range(20))
    assert ok >= 19


def _small_cfg(**kw):
    return PredictorConfig(height=8, width=12, n_frames=3, pool=2, coarse_channels=3, fine_channels=2,
                           gate_channels=4, **kw)


def test_predictor_output_contracts():
    cfg = _small_cfg()
    rng = SeededRng(4)
    frames = rng.uniform(0, 1, (2, 3, 8, 12))
    cam = build_cam_predictor(cfg, rng.split("cam"))
    assert cam.forward(frames).shape == (2, 4, 8, 12)
    d, g = cam.predict(frames)
    assert np.all(d >= 0) and np.all((g > 0) & (g < 1))
    nao = build_nao_predictor(cfg, rng.split("nao"))
    hist = rng.uniform(0, 2, (2, 6, 8, 12))
    assert nao.predict(frames, hist).shape == (2, 2, 8, 12)
    nao.zero_gate = True
    assert np.all(nao.predict(frames, hist) == 0.5)
    with pytest.raises(ValueError):
        nao.predict(frames)
    with pytest.raises(ShapeError):
        cam.forward(frames[:, :2])
    plain = build_nao_predictor(_small_cfg(use_cam_history=False), rng.split("plain"))
    assert plain.predict(frames).shape == (2, 2, 8, 12)


def test_predictor_config_errors():
    with pytest.raises(ValueError):
        build_cam_predictor(_small_cfg().__class__(height=2, width=2, pool=4), SeededRng(0))
    with pytest.raises(ValueError):
        build_nao_predictor(PredictorConfig(gate_channels=3), SeededRng(0))


def test_checkpoint_round_trip(tmp_path):
    cfg = _small_cfg()
    a = build_cam_predictor(cfg, SeededRng(5))
    b = build_cam_predictor(cfg, SeededRng(6))
    save_layers(tmp_path / "ck", a.layers, {"seed": 5})
    doc = load_into(tmp_path / "ck", b.layers)
    assert doc["seed"] == 5
    for la, lb in zip(a.layers, b.layers):
        for k in la.params:
            assert np.array_equal(la.params[k].astype(np.float32), lb.params[k])
    with pytest.raises(ValueError):
        load_into(tmp_path / "ck", b.layers[:-1])
