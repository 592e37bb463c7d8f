"""Central finite-difference checks for the hand-written gradients.

Errors are tensor-wise relative: ``|a - n| / (|a| + |n|)`` over the whole
gradient array, which stays meaningful when individual entries are near 0.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import SeededRng
from .layers import AvgPool, Conv2D, Dense, GcnLayer, LstmCell, Upsample
from .losses import softmax_cross_entropy

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=[["readwrite"]])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def check_layer(layer, inputs: list[np.ndarray], rng: SeededRng, *, call=None) -> dict[str, float]:
    """Check a layer against the loss ``sum(out * R)`` for a random ``R``.

    ``inputs[0]`` is differentiated; further inputs (e.g. an adjacency) are
    held fixed.  ``call(layer, *inputs)`` overrides ``layer.forward``.
    """
    call = call or (lambda lay, *xs: lay.forward(*xs))
    out = call(layer, *inputs)
    r = rng.normal(0.0, 1.0, np.shape(out))

    def loss():
        return float(np.sum(call(layer, *inputs) * r))

    call(layer, *inputs)
    dx = layer.backward(r)
    errs = {"input": relative_error(dx, numeric_grad(loss, inputs[0]))}
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for name, p in layer.params.items():
        errs[name] = relative_error(analytic[name], numeric_grad(loss, p))
    return errs


def _dense_case(rng, activation):
    layer = Dense(5, 4, activation, rng=rng)
    layer.params["b"][...] = rng.normal(0, 0.5, 4)
    return layer, [rng.normal(0, 1, (3, 5))]


def _conv_case(rng, stride=1, dilation=1):
    layer = Conv2D(2, 3, 3, stride=stride, activation="tanh", rng=rng, dilation=dilation)
    layer.params["b"][...] = rng.normal(0, 0.5, 3)
    return layer, [rng.normal(0, 1, (2, 2, 7, 6))]


def _gcn_case(rng):
    n = 5
    a = rng.uniform(0, 1, (n, n)) * (rng.uniform(0, 1, (n, n)) < 0.5) + np.eye(n)
    a = a / a.sum(axis=1, keepdims=True)
    return GcnLayer(4, 3, "tanh", rng=rng), [rng.normal(0, 1, (n, 4)), a]


def _lstm_case(rng):
    layer = LstmCell(3, 4, rng=rng)
    layer.params["b"][...] = rng.normal(0, 0.5, 16)
    xs = rng.normal(0, 1, (4, 2, 3))
    mask = np.ones((4, 2))
    mask[0, 1] = 0.0  # left padding on the second sequence
    return layer, [xs, mask]


def layer_cases() -> dict[str, Callable]:
    cases = {f"dense_{a}": (lambda rng, a=a: _dense_case(rng, a))
             for a in ("linear", "relu", "sigmoid", "tanh", "softplus")}
    cases.update({
        "conv2d": _conv_case,
        "conv2d_stride2": lambda rng: _conv_case(rng, stride=2),
        "conv2d_dilated": lambda rng: _conv_case(rng, dilation=2),
        "avgpool": lambda rng: (AvgPool(2), [rng.normal(0, 1, (1, 2, 5, 7))]),
        "upsample": lambda rng: (Upsample(2, 7, 5), [rng.normal(0, 1, (1, 2, 4, 3))]),
        "gcn": _gcn_case,
        "lstm": _lstm_case,
    })
    return cases


def check_softmax_ce(rng: SeededRng) -> float:
    z = rng.normal(0, 2, 6)
    label = int(rng.integers(6))
    _, g = softmax_cross_entropy(z, label)
    return relative_error(g, numeric_grad(lambda: softmax_cross_entropy(z, label)[0], z))


def run_layer_checks(seeds) -> dict[str, float]:
    """Max relative error per case over ``seeds``."""
    worst: dict[str, float] = {}
    for seed in seeds:
        base = SeededRng(seed)
        for name, make in layer_cases().items():
            rng = base.split(name)
            layer, inputs = make(rng)
            errs = check_layer(layer, inputs, rng)
            worst[name] = max(worst.get(name, 0.0), max(errs.values()))
        worst["softmax_ce"] = max(worst.get("softmax_ce", 0.0), check_softmax_ce(base.split("ce")))
    return worst


def check_model(model, loss_fn: Callable[[bool], float]) -> float:
    """Max relative error over all parameters of a composite model.

    ``loss_fn(backward)`` evaluates the model loss and, when ``backward`` is
    true, fills every layer's ``grads``.
    """
    loss_fn(True)
    analytic = [{k: v.copy() for k, v in layer.grads.items()} for layer in model.layers]
    worst = 0.0
    for layer, grads in zip(model.layers, analytic):
        for name, p in layer.params.items():
            num = numeric_grad(lambda: loss_fn(False), p)
            worst = max(worst, relative_error(grads[name], num))
    return worst


def _jitter_biases(model, rng):
    # zero biases put relu inputs exactly on the kink wherever a window
    # covers only padding
    for layer in model.layers:
        if "b" in layer.params:
            layer.params["b"][...] = rng.normal(0, 0.3, layer.params["b"].shape)


def predictor_checks(seed: int) -> dict[str, float]:
    """Finite-difference checks of both stand-in predictors at toy size."""
    from .predictors import CamPredictor, NaoPredictor, PredictorConfig

    rng = SeededRng(seed)
    cfg = PredictorConfig(height=6, width=7, n_frames=2, pool=2, coarse_channels=2, fine_channels=2,
                          gate_channels=2)
    frames = rng.uniform(0, 1, (2, 2, 6, 7))
    c = rng.choice([-1.0, 0.0, 0.5, 1.2], size=(2, 2, 6, 7))
    cam = CamPredictor(cfg, rng.split("cam"))
    _jitter_biases(cam, rng)
    out = {"cam_predictor": check_model(cam, lambda bw: cam.loss(frames, c, bw))}
    nao = NaoPredictor(cfg, rng.split("nao"))
    _jitter_biases(nao, rng)
    hist = rng.uniform(0, 2, (2, 4, 6, 7))
    psi = rng.uniform(0, 1, (2, 2, 6, 7)) < 0.3
    out["nao_predictor"] = check_model(nao, lambda bw: nao.loss(frames, hist, psi, bw))
    return out


def graph_stream_check(seed: int) -> dict[str, float]:
    """End-to-end check of the graph stream (GCN, LSTM, output layer) on a
    toy activity graph, including the gradient w.r.t. node features."""
    from ..forecaster import ForecasterConfig, GraphStream
    from ..state_graph import ContactState, build_graph, suppress_duplicates

    rng = SeededRng(seed)
    # two states and two actions: a 4-node graph
    n_cls, actions = 3, [("a", 0), ("b", 1)]
    pool = [ContactState(0, -1, 1, -1), ContactState(1, 2, -1, -1)]
    seqs = [suppress_duplicates([pool[0], pool[1], pool[0]], [0, 2, 4]),
            suppress_duplicates([pool[1], pool[0]], [0, 3])]
    transcripts = [[(int(rng.integers(2)), 0, 2), (int(rng.integers(2)), 2, 6)] for _ in seqs]
    graph = build_graph(seqs, transcripts, None, actions, [f"c{i}" for i in range(n_cls)])
    graph = graph.with_features(rng.normal(0, 1, (graph.z, 3)))
    cfg = ForecasterConfig(gcn_dims=(4, 3), lstm_hidden=4)
    stream = GraphStream(graph, len(actions), cfg, rng.split("stream"))
    _jitter_biases(stream, rng)
    node_seqs = [[int(i) for i in rng.integers(0, graph.z, n)] for n in (1, 3, 4)]  # left padding
    labels = rng.integers(0, len(actions), len(node_seqs))

    dx = []

    def loss(backward: bool = False):
        stream.refresh_features()
        val, g = softmax_cross_entropy(stream.forward(node_seqs), labels)
        if backward:
            dx.append(stream.backward(g, input_grad=True))
        return val

    out = {"graph_stream": check_model(stream, loss)}
    loss(True)
    out["graph_stream_features"] = relative_error(dx[-1], numeric_grad(loss, stream.x))
    return out
