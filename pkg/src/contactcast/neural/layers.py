"""Hand-differentiated layers.

Every layer caches what it needs in ``forward`` and returns the input
gradient from ``backward``, leaving parameter gradients in ``self.grads``
(same keys as ``self.params``).  Arrays are float64 throughout.

Shapes: dense inputs are ``(batch, features)``; image inputs are
``(batch, channels, height, width)``; graph inputs are ``(nodes, features)``.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse
from numpy.lib.stride_tricks import sliding_window_view

from ..numerics import SeededRng, ShapeError

ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "softplus")


class BackwardBeforeForwardError(RuntimeError):
    pass


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def softplus(x):
    return np.logaddexp(0.0, x)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dy/dz given pre-activation ``z`` and output ``y``."""
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    if name == "softplus":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise BackwardBeforeForwardError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    """``y = act(x W^T + b)`` with ``W`` of shape (out, in)."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng: SeededRng | None = None,
                 scale: float | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        s = np.sqrt(1.0 / n_in) if scale is None else scale
        w = rng.normal(0.0, s, (n_out, n_in)) if rng is not None else np.zeros((n_out, n_in))
        self.params = {"W": w, "b": np.zeros(n_out)}
        self.zero_grads()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.params["W"].shape[1]:
            raise ShapeError(f"dense: input has {x.shape[-1]} features, expected {self.params['W'].shape[1]}")
        z = x @ self.params["W"].T + self.params["b"]
        y = activate(self.activation, z)
        self._cache = (x, z, y)
        return y

    def backward(self, dy):
        x, z, y = self._need_cache()
        dz = np.asarray(dy) * activation_grad(self.activation, z, y)
        x2 = x.reshape(-1, x.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        self.grads = {"W": dz2.T @ x2, "b": dz2.sum(axis=0)}
        return dz @ self.params["W"]

    def spec(self):
        n_out, n_in = self.params["W"].shape
        return {"kind": self.kind, "n_in": n_in, "n_out": n_out, "activation": self.activation}


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


class Conv2D(Layer):
    """2-D convolution (cross-correlation) by im2col."""

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, padding: int | None = None,
                 activation: str = "linear", rng: SeededRng | None = None, dilation: int = 1):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.stride = int(stride)
        self.dilation = int(dilation)
        self.padding = self.dilation * (kernel // 2) if padding is None else int(padding)
        self.activation = activation
        fan_in = in_ch * kernel * kernel
        w = (rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, kernel, kernel))
             if rng is not None else np.zeros((out_ch, in_ch, kernel, kernel)))
        self.params = {"W": w, "b": np.zeros(out_ch)}
        self.zero_grads()

    @property
    def kernel(self) -> int:
        return self.params["W"].shape[2]

    def _cols(self, xp):
        k, d, s = self.kernel, self.dilation, self.stride
        span = d * (k - 1) + 1
        win = sliding_window_view(xp, (span, span), axis=(2, 3))  # (N,C,H',W',span,span)
        win = win[:, :, ::s, ::s, ::d, ::d]
        n, c, ho, wo = win.shape[:4]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.params["W"].shape[1]:
            raise ShapeError(f"conv2d: expected (N, {self.params['W'].shape[1]}, H, W), got {x.shape}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = self._cols(xp)
        wmat = self.params["W"].reshape(self.params["W"].shape[0], -1)
        z = (cols @ wmat.T + self.params["b"]).transpose(0, 3, 1, 2)
        y = activate(self.activation, z)
        self._cache = (x.shape, cols, z, y)
        return y

    def backward(self, dy):
        xshape, cols, z, y = self._need_cache()
        dz = np.asarray(dy) * activation_grad(self.activation, z, y)  # (N,O,Ho,Wo)
        w = self.params["W"]
        o, c, k, _ = w.shape
        dzt = dz.transpose(0, 2, 3, 1)  # (N,Ho,Wo,O)
        self.grads = {
            "W": np.einsum("nhwo,nhwk->ok", dzt, cols, optimize=True).reshape(w.shape),
            "b": dz.sum(axis=(0, 2, 3)),
        }
        dcols = (dzt @ w.reshape(o, -1)).reshape(dzt.shape[:3] + (c, k, k))
        n, ho, wo = dzt.shape[:3]
        p, s, d = self.padding, self.stride, self.dilation
        dxp = np.zeros((xshape[0], c, xshape[2] + 2 * p, xshape[3] + 2 * p))
        for i in range(k):
            for j in range(k):
                r0, c0 = i * d, j * d
                dxp[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + xshape[2], p:p + xshape[3]]

    def spec(self):
        o, c, k, _ = self.params["W"].shape
        return {"kind": self.kind, "in_ch": c, "out_ch": o, "kernel": k, "stride": self.stride,
                "padding": self.padding, "dilation": self.dilation, "activation": self.activation}


class AvgPool(Layer):
    """Non-overlapping mean pooling; the input is zero-padded to a multiple of ``k``."""

    kind = "avgpool"

    def __init__(self, k: int):
        super().__init__()
        self.k = int(k)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        n, c, h, w = x.shape
        k = self.k
        hp, wp = -(-h // k) * k, -(-w // k) * k
        xp = np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)))
        self._cache = (h, w)
        return xp.reshape(n, c, hp // k, k, wp // k, k).mean(axis=(3, 5))

    def backward(self, dy):
        h, w = self._need_cache()
        k = self.k
        dx = np.repeat(np.repeat(dy, k, axis=2), k, axis=3) / (k * k)
        self.grads = {}
        return dx[:, :, :h, :w]

    def spec(self):
        return {"kind": self.kind, "k": self.k}


class Upsample(Layer):
    """Nearest-neighbour upsampling by ``k``, cropped to ``(height, width)``."""

    kind = "upsample"

    def __init__(self, k: int, height: int, width: int):
        super().__init__()
        self.k, self.height, self.width = int(k), int(height), int(width)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.k
        if x.shape[2] * k < self.height or x.shape[3] * k < self.width:
            raise ShapeError(f"upsample: {x.shape[2:]} x{k} does not cover {(self.height, self.width)}")
        self._cache = x.shape
        return np.repeat(np.repeat(x, k, axis=2), k, axis=3)[:, :, : self.height, : self.width]

    def backward(self, dy):
        shape = self._need_cache()
        n, c, hs, ws = shape
        k = self.k
        full = np.zeros((n, c, hs * k, ws * k))
        full[:, :, : self.height, : self.width] = dy
        self.grads = {}
        return full.reshape(n, c, hs, k, ws, k).sum(axis=(3, 5))

    def spec(self):
        return {"kind": self.kind, "k": self.k, "height": self.height, "width": self.width}


class GcnLayer(Layer):
    """Graph convolution ``act(A H W)`` with a fixed propagation matrix ``A``."""

    kind = "gcn"

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu", rng: SeededRng | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        s = np.sqrt(2.0 / (in_dim + out_dim))
        w = rng.normal(0.0, s, (in_dim, out_dim)) if rng is not None else np.zeros((in_dim, out_dim))
        self.params = {"W": w}
        self.zero_grads()

    def forward(self, h, adj, propagated=None):
        """``propagated`` may pass a precomputed ``A @ h`` for fixed inputs."""
        h = np.asarray(h, dtype=np.float64)
        if not sparse.issparse(adj):
            adj = np.asarray(adj, dtype=np.float64)
        if adj.shape != (h.shape[0], h.shape[0]):
            raise ShapeError(f"gcn: adjacency {adj.shape} does not match {h.shape[0]} nodes")
        if h.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"gcn: node features have {h.shape[1]} dims, expected {self.params['W'].shape[0]}")
        ah = adj @ h if propagated is None else propagated
        z = ah @ self.params["W"]
        y = activate(self.activation, z)
        self._cache = (adj, ah, z, y)
        return y

    def backward(self, dy, input_grad: bool = True):
        adj, ah, z, y = self._need_cache()
        dz = np.asarray(dy) * activation_grad(self.activation, z, y)
        self.grads = {"W": ah.T @ dz}
        if not input_grad:
            return None
        return adj.T @ (dz @ self.params["W"].T)

    def spec(self):
        i, o = self.params["W"].shape
        return {"kind": self.kind, "in_dim": i, "out_dim": o, "activation": self.activation}


class LstmCell(Layer):
    """Single-layer LSTM unrolled over a (time, batch, features) sequence.

    Gates are stacked ``[input, forget, output, candidate]`` in ``W`` of shape
    ``(4H, in + H)`` acting on ``[x, h_prev]``.  A per-step ``mask`` (1 =
    real step, 0 = padding) carries the state through padded steps, so left
    padding leaves the initial zero state untouched.
    """

    kind = "lstm"

    def __init__(self, in_dim: int, hidden: int, rng: SeededRng | None = None, forget_bias: float = 1.0):
        super().__init__()
        self.in_dim, self.hidden = int(in_dim), int(hidden)
        s = np.sqrt(1.0 / (in_dim + hidden))
        w = rng.normal(0.0, s, (4 * hidden, in_dim + hidden)) if rng is not None else \
            np.zeros((4 * hidden, in_dim + hidden))
        b = np.zeros(4 * hidden)
        if rng is not None:
            b[hidden:2 * hidden] = forget_bias
        self.params = {"W": w, "b": b}
        self.zero_grads()

    def step(self, x, h, c):
        """One step for (batch, in) inputs; returns ``(h', c', cache)``."""
        hd = self.hidden
        xh = np.concatenate([x, h], axis=1)
        a = xh @ self.params["W"].T + self.params["b"]
        i = sigmoid(a[:, :hd])
        f = sigmoid(a[:, hd:2 * hd])
        o = sigmoid(a[:, 2 * hd:3 * hd])
        g = np.tanh(a[:, 3 * hd:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (xh, c, i, f, o, g, tc)

    def forward(self, xs, mask=None, h0=None, c0=None):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[:, None, :]
        t_len, n, d = xs.shape
        if d != self.in_dim:
            raise ShapeError(f"lstm: input has {d} features, expected {self.in_dim}")
        m = np.ones((t_len, n)) if mask is None else np.asarray(mask, dtype=np.float64)
        h = np.zeros((n, self.hidden)) if h0 is None else np.asarray(h0, dtype=np.float64)
        c = np.zeros((n, self.hidden)) if c0 is None else np.asarray(c0, dtype=np.float64)
        caches, hs = [], []
        for t in range(t_len):
            h_new, c_new, cache = self.step(xs[t], h, c)
            mt = m[t][:, None]
            h = mt * h_new + (1.0 - mt) * h
            c = mt * c_new + (1.0 - mt) * c
            caches.append(cache)
            hs.append(h)
        self._cache = (caches, m)
        return h

    def backward(self, dh_last, dc_last=None):
        """Backpropagate from the final hidden state; returns dxs (T, N, in)."""
        caches, m = self._need_cache()
        hd, d = self.hidden, self.in_dim
        w = self.params["W"]
        dw = np.zeros_like(w)
        db = np.zeros_like(self.params["b"])
        dh = np.asarray(dh_last, dtype=np.float64).copy()
        dc = np.zeros_like(dh) if dc_last is None else np.asarray(dc_last, dtype=np.float64).copy()
        dxs = np.zeros((len(caches), dh.shape[0], d))
        for t in range(len(caches) - 1, -1, -1):
            xh, c_prev, i, f, o, g, tc = caches[t]
            mt = m[t][:, None]
            dh_new, dc_carry = dh * mt, dc * mt
            do = dh_new * tc
            dcn = dc_carry + dh_new * o * (1.0 - tc * tc)
            di = dcn * g
            dg = dcn * i
            df = dcn * c_prev
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
            dw += da.T @ xh
            db += da.sum(axis=0)
            dxh = da @ w
            dxs[t] = dxh[:, :d]
            dh = dxh[:, d:] + dh * (1.0 - mt)
            dc = dcn * f + dc * (1.0 - mt)
        self.grads = {"W": dw, "b": db}
        self._dh0, self._dc0 = dh, dc
        return dxs

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "hidden": self.hidden}
