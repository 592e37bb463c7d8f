"""Classification losses."""
from __future__ import annotations

import numpy as np


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits, label):
    """Loss and gradient for one logit vector or a batch.

    For a batch ``(n, k)`` with ``n`` labels the loss is the batch mean and
    the gradient is ``(softmax - onehot) / n``.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    k = z2.shape[1]
    if labels.shape[0] != z2.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {z2.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range for {k} classes")
    lsm = log_softmax(z2)
    rows = np.arange(z2.shape[0])
    loss = -lsm[rows, labels].mean()
    grad = np.exp(lsm)
    grad[rows, labels] -= 1.0
    grad /= z2.shape[0]
    return float(loss), (grad[0] if single else grad)
