"""Prediction-side contact-map algebra: thresholds, superimposition, losses,
noise augmentation.

Maps are 2-D float arrays (or stacks of them) in seconds.  Ground-truth maps
use -1 for background; predicted maps are non-negative.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, ShapeError, gaussian_sample, same_shape

BCE_EPS = 1e-7
CAM_MASK_THRESHOLD = 0.5
NAO_MASK_THRESHOLD = 0.15
MAE_WEIGHT = 0.2
NAO_POS_WEIGHT = 2.0


@dataclass
class PredictionBundle:
    """Regressed times and soft contact masks for both hands."""

    d_l: np.ndarray
    d_r: np.ndarray
    gamma_soft_l: np.ndarray
    gamma_soft_r: np.ndarray
    contact_threshold: float = CAM_MASK_THRESHOLD
    nao_threshold: float = NAO_MASK_THRESHOLD

    def __post_init__(self):
        same_shape(self.d_l, self.d_r, self.gamma_soft_l, self.gamma_soft_r,
                   names=("d_l", "d_r", "gamma_soft_l", "gamma_soft_r"))
        if np.any(np.asarray(self.d_l) < 0) or np.any(np.asarray(self.d_r) < 0):
            raise ValueError("regressed times must be non-negative")

    def cam(self, side: str) -> np.ndarray:
        d = self.d_l if side == "l" else self.d_r
        g = self.gamma_soft_l if side == "l" else self.gamma_soft_r
        return superimpose(d, binarize(g, self.contact_threshold))


def binarize(soft, threshold: float) -> np.ndarray:
    """1 where ``soft >= threshold`` (inclusive)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(soft, dtype=np.float64) >= threshold


def superimpose(d, gamma_hat) -> np.ndarray:
    """Zero the regressed times wherever contact is predicted."""
    d = np.asarray(d, dtype=np.float64)
    gamma_hat = np.asarray(gamma_hat, dtype=bool)
    same_shape(d, gamma_hat, names=("D", "gamma_hat"))
    if np.any(d < 0):
        raise ValueError("D must be non-negative")
    return np.where(gamma_hat, 0.0, d)


def masked_mae(d, c) -> tuple[float, bool]:
    """Mean |D - C| over pixels with C > 0.

    Returns ``(value, empty)``; ``empty`` is True (and value 0) when no pixel
    is supervised.
    """
    d = np.asarray(d, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    same_shape(d, c, names=("D", "C"))
    sel = c > 0
    if not sel.any():
        return 0.0, True
    return float(np.abs(d[sel] - c[sel]).mean()), False


def weighted_bce(soft, target, pos_weight: float = 1.0, eps: float = BCE_EPS) -> float:
    """Mean of ``-[w y log p + (1 - y) log(1 - p)]`` with p clamped to [eps, 1-eps]."""
    if pos_weight <= 0:
        raise ValueError("pos_weight must be > 0")
    p = np.clip(np.asarray(soft, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(target, dtype=np.float64)
    same_shape(p, y, names=("soft", "target"))
    return float(-(pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())


def weighted_bce_grad(soft, target, pos_weight: float = 1.0, eps: float = BCE_EPS) -> np.ndarray:
    """Gradient of :func:`weighted_bce` w.r.t. ``soft`` (zero where clamped)."""
    raw = np.asarray(soft, dtype=np.float64)
    p = np.clip(raw, eps, 1.0 - eps)
    y = np.asarray(target, dtype=np.float64)
    g = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / p.size
    return np.where((raw > eps) & (raw < 1.0 - eps), g, 0.0)


def bce_with_logits(logits, target, pos_weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Weighted BCE on pre-sigmoid logits; returns (mean loss, dloss/dlogits).

    Equal to :func:`weighted_bce` of ``sigmoid(logits)`` away from the clamp,
    computed stably.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    same_shape(z, y, names=("logits", "target"))
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    loss = -(pos_weight * y * log_p + (1.0 - y) * log_1mp)
    p = np.exp(log_p)
    grad = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / z.size
    return float(loss.mean()), grad


def combined_cam_loss(bundle: PredictionBundle, truth, gamma: float = MAE_WEIGHT, frame: int | None = None,
                      eps: float = BCE_EPS) -> float:
    """Unweighted BCE on both contact channels plus ``gamma`` times the masked
    MAE on both time channels.

    ``truth`` is a :class:`~contactcast.annotation_flow.GroundTruthMaps`; its
    contact target is ``C == 0`` and ``frame`` selects a frame from stacked
    maps.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    bce, mae = cam_loss_terms(bundle, truth, frame, eps)
    return bce + gamma * mae


def cam_loss_terms(bundle: PredictionBundle, truth, frame: int | None = None, eps: float = BCE_EPS):
    """``(bce, mae)``: both averaged over the two hand channels."""
    bces, maes = [], []
    for side in ("l", "r"):
        c = truth.c(side) if frame is None else truth.c(side)[frame]
        d = bundle.d_l if side == "l" else bundle.d_r
        g = bundle.gamma_soft_l if side == "l" else bundle.gamma_soft_r
        bces.append(weighted_bce(g, c == 0, 1.0, eps))
        maes.append(masked_mae(d, c)[0])
    return float(np.mean(bces)), float(np.mean(maes))


def noise_augment(cam, rng: SeededRng, mu: float = 0.0, sigma: float = 0.25) -> np.ndarray:
    """``cam + cam * Z`` with Z i.i.d. N(mu, sigma^2) per pixel, clamped at 0."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    cam = np.asarray(cam, dtype=np.float64)
    z = gaussian_sample(rng, mu, sigma, cam.size).reshape(cam.shape)
    return np.maximum(cam + cam * z, 0.0)


def merge_hand_channels(left, right) -> np.ndarray:
    left = np.asarray(left, dtype=bool)
    right = np.asarray(right, dtype=bool)
    if left.shape != right.shape:
        raise ShapeError(f"hand channels differ in shape: {left.shape} vs {right.shape}")
    return left | right
