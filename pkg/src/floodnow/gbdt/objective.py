"""Multiclass softmax cross-entropy: probabilities, loss and Newton statistics."""

from __future__ import annotations

import numpy as np


def softmax(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    z = raw - raw.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(labels: np.ndarray, raw: np.ndarray) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(raw)."""
    raw = np.asarray(raw, dtype=np.float64)
    z = raw - raw.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(labels)), labels]))


def softmax_gradients(labels: np.ndarray, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row, per-class gradient and diagonal hessian of the loss.

    ``g = p - onehot(y)`` and ``h = p (1 - p)`` where ``p = softmax(raw)``.
    Returned arrays are per-row (not divided by n).
    """
    labels = np.asarray(labels)
    p = softmax(raw)
    g = p.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    h = p * (1.0 - p)
    return g, h
