"""Small convolutional stand-ins for the contact-map and next-active-object
networks.

Both take an 8-frame occupancy stack as 8 input channels.  A coarse stream
pools by ``pool``, runs three convolutions and upsamples back; a fine stream
sees only the last frame at full resolution.

* :class:`CamPredictor` concatenates both streams into a 4-channel head:
  regressed times ``D_l, D_r`` (softplus) and contact-mask logits.
* :class:`NaoPredictor` sums a frame stream and a contact-map-history stream,
  multiplies the sum pixelwise with the fine branch and sums each half of
  the channels into one logit per hand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contact_maps import CAM_MASK_THRESHOLD, NAO_MASK_THRESHOLD, NAO_POS_WEIGHT, bce_with_logits
from ..numerics import SeededRng, ShapeError
from .layers import AvgPool, Conv2D, Upsample, sigmoid, softplus


@dataclass
class PredictorConfig:
    height: int = 64
    width: int = 114
    n_frames: int = 8
    pool: int = 4
    coarse_channels: int = 12
    fine_channels: int = 8
    gate_channels: int = 8  # per NAO model: split evenly between the two hands
    use_cam_history: bool = True
    mae_weight: float = 0.2
    pos_weight: float = NAO_POS_WEIGHT
    cam_threshold: float = CAM_MASK_THRESHOLD
    nao_threshold: float = NAO_MASK_THRESHOLD

    def validate(self):
        if self.height < self.pool or self.width < self.pool:
            raise ValueError(f"frame {self.height}x{self.width} smaller than pool {self.pool}")
        if self.gate_channels % 2:
            raise ValueError("gate_channels must be even")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")


def _coarse_stream(cfg: PredictorConfig, in_ch: int, out_ch: int, out_act: str, rng: SeededRng):
    c = cfg.coarse_channels
    return [AvgPool(cfg.pool),
            Conv2D(in_ch, c, 3, activation="relu", rng=rng.split(0)),
            Conv2D(c, c, 3, activation="relu", rng=rng.split(1), dilation=2),
            Conv2D(c, out_ch, 3, activation=out_act, rng=rng.split(2)),
            Upsample(cfg.pool, cfg.height, cfg.width)]


def _run(layers, x):
    for layer in layers:
        x = layer.forward(x)
    return x


def _back(layers, d):
    for layer in reversed(layers):
        d = layer.backward(d)
    return d


class _Model:
    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def _check_input(self, x, channels):
        x = np.asarray(x, dtype=np.float64)
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (channels, cfg.height, cfg.width):
            raise ShapeError(f"expected (N, {channels}, {cfg.height}, {cfg.width}), got {x.shape}")
        return x

    @property
    def n_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())


class CamPredictor(_Model):
    def __init__(self, cfg: PredictorConfig, rng: SeededRng):
        cfg.validate()
        self.cfg = cfg
        c, f = cfg.coarse_channels, cfg.fine_channels
        self.coarse = _coarse_stream(cfg, cfg.n_frames, c, "relu", rng.split("coarse"))
        self.fine = [Conv2D(1, f, 3, activation="relu", rng=rng.split("fine", 0)),
                     Conv2D(f, f, 3, activation="relu", rng=rng.split("fine", 1))]
        self.head = Conv2D(c + f, 4, 3, activation="linear", rng=rng.split("head"))
        self.layers = self.coarse + self.fine + [self.head]

    def forward(self, frames) -> np.ndarray:
        """Raw head output (N, 4, H, W): two time pre-activations, two mask logits."""
        x = self._check_input(frames, self.cfg.n_frames)
        a = _run(self.coarse, x)
        b = _run(self.fine, x[:, -1:])
        self._split = a.shape[1]
        return self.head.forward(np.concatenate([a, b], axis=1))

    def backward(self, draw):
        dcat = self.head.backward(draw)
        s = self._split
        _back(self.coarse, dcat[:, :s])
        _back(self.fine, dcat[:, s:])

    def predict(self, frames):
        """``(D, gamma_soft)``, each (N, 2, H, W) ordered (left, right)."""
        raw = self.forward(frames)
        return softplus(raw[:, :2]), sigmoid(raw[:, 2:])

    def loss(self, frames, c_truth, backward: bool = True):
        """BCE on contact masks (target ``C == 0``) plus weighted masked MAE
        of the times on ``C > 0`` pixels, each averaged over both hands."""
        raw = self.forward(frames)
        c = np.asarray(c_truth, dtype=np.float64)
        bce, dlogit = bce_with_logits(raw[:, 2:], (c == 0).astype(np.float64))
        d = softplus(raw[:, :2])
        draw_t = np.zeros_like(d)
        maes = []
        for ch in range(2):
            sel = c[:, ch] > 0
            n = int(sel.sum())
            if n == 0:
                maes.append(0.0)
                continue
            diff = d[:, ch] - c[:, ch]
            maes.append(float(np.abs(diff[sel]).mean()))
            draw_t[:, ch] = np.where(sel, np.sign(diff), 0.0) / n * sigmoid(raw[:, ch])
        mae = float(np.mean(maes))
        total = bce + self.cfg.mae_weight * mae
        if backward:
            draw = np.concatenate([self.cfg.mae_weight * draw_t / 2.0, dlogit], axis=1)
            self.backward(draw)
        return total


class NaoPredictor(_Model):
    def __init__(self, cfg: PredictorConfig, rng: SeededRng):
        cfg.validate()
        self.cfg = cfg
        k, f = cfg.gate_channels, cfg.fine_channels
        self.frame_stream = _coarse_stream(cfg, cfg.n_frames, k, "linear", rng.split("frames"))
        self.cam_stream = (_coarse_stream(cfg, 2 * cfg.n_frames, k, "linear", rng.split("cam"))
                           if cfg.use_cam_history else [])
        self.fine = [Conv2D(1, f, 3, activation="relu", rng=rng.split("fine", 0)),
                     Conv2D(f, k, 3, activation="linear", rng=rng.split("fine", 1))]
        self.layers = self.frame_stream + self.cam_stream + self.fine
        self.zero_gate = False

    def logits(self, frames, cam_history=None) -> np.ndarray:
        x = self._check_input(frames, self.cfg.n_frames)
        s = _run(self.frame_stream, x)
        if self.cfg.use_cam_history:
            if cam_history is None:
                raise ValueError("this model needs a contact-map history")
            s = s + _run(self.cam_stream, self._check_input(cam_history, 2 * self.cfg.n_frames))
        g = _run(self.fine, x[:, -1:])
        if self.zero_gate:
            g = np.zeros_like(g)
        self._cache = (s, g)
        prod = s * g
        half = self.cfg.gate_channels // 2
        return np.stack([prod[:, :half].sum(axis=1), prod[:, half:].sum(axis=1)], axis=1)

    def backward(self, dlogits):
        s, g = self._cache
        half = self.cfg.gate_channels // 2
        dprod = np.concatenate([np.repeat(dlogits[:, :1], half, axis=1),
                                np.repeat(dlogits[:, 1:], half, axis=1)], axis=1)
        ds = dprod * g
        _back(self.frame_stream, ds)
        if self.cfg.use_cam_history:
            _back(self.cam_stream, ds)
        _back(self.fine, dprod * s)

    def predict(self, frames, cam_history=None) -> np.ndarray:
        """Soft next-active-object maps (N, 2, H, W) ordered (left, right)."""
        return sigmoid(self.logits(frames, cam_history))

    def loss(self, frames, cam_history, psi, backward: bool = True):
        z = self.logits(frames, cam_history)
        loss, dz = bce_with_logits(z, np.asarray(psi, dtype=np.float64), self.cfg.pos_weight)
        if backward:
            self.backward(dz)
        return loss


def build_cam_predictor(cfg: PredictorConfig, rng: SeededRng) -> CamPredictor:
    return CamPredictor(cfg, rng)


def build_nao_predictor(cfg: PredictorConfig, rng: SeededRng) -> NaoPredictor:
    return NaoPredictor(cfg, rng)
