"""ADAM with bias correction and multiplicative per-step weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Return updated copies of ``params``; moments in ``state`` advance.

    ``p <- (p - lr * m_hat / (sqrt(v_hat) + eps)) * (1 - weight_decay)``.
    """
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeError(f"adam: gradient for {name!r} has shape {g.shape}, parameter {np.shape(p)}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new = np.asarray(p, dtype=np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay:
            new = new * (1.0 - state.weight_decay)
        out[name] = new
    return out


class Adam:
    """In-place ADAM over a list of layers' ``params``/``grads`` dicts."""

    def __init__(self, layers, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.layers = list(layers)
        self.state = AdamState(lr, beta1, beta2, eps, weight_decay)

    def step(self):
        params, grads = {}, {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                params[f"{i}.{k}"] = v
                grads[f"{i}.{k}"] = layer.grads[k]
        new = adam_step(self.state, params, grads)
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                layer.params[k][...] = new[f"{i}.{k}"]
