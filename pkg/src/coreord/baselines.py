"""Base ordinal losses over the linear head's logits, and prediction rules.

Two interchangeable batch losses: plain cross-entropy on hard class
indices, and cross-entropy against soft ordinal targets built from
exp(-|label - rank|) so nearby ranks share probability mass.  Both come
with analytic logit gradients for the trainer.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

__all__ = [
    "softmax",
    "cross_entropy",
    "cross_entropy_grad",
    "sord_targets",
    "sord_loss",
    "sord_loss_grad",
    "predict",
]


def softmax(logits: np.ndarray) -> np.ndarray:
    a = np.asarray(logits, dtype=np.float64)
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_logits(logits) -> np.ndarray:
    a = np.asarray(logits, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] < 1:
        raise InputError(f"logits must be (batch, classes), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("logits contain non-finite entries")
    return a


def _log_softmax(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean negative log softmax probability of the true class index."""
    a = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size != a.shape[0]:
        raise InputError(f"{a.shape[0]} logit rows but {y.size} labels")
    if np.any(y < 0) or np.any(y >= a.shape[1]):
        raise InputError(f"class index out of range [0, {a.shape[1]})")
    return float(-_log_softmax(a)[np.arange(y.size), y].mean())


def cross_entropy_grad(logits, labels) -> np.ndarray:
    """d(cross_entropy)/d(logits): (softmax - onehot) / batch."""
    a = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    grad = softmax(a)
    grad[np.arange(y.size), y] -= 1.0
    return grad / y.size


def sord_targets(label: float, ranks) -> np.ndarray:
    """Soft ordinal target: softmax of -|label - rank| over the rank vocabulary.

    Unimodal and peaked at the nearest rank; equidistant ranks share mass.
    """
    r = np.asarray(ranks, dtype=np.float64).reshape(-1)
    if r.size < 1:
        raise InputError("rank vocabulary is empty")
    if not np.isfinite(label) or not np.all(np.isfinite(r)):
        raise InputError("non-finite label or ranks")
    d = np.abs(float(label) - r)
    w = np.exp(-(d - d.min()))
    return w / w.sum()


def sord_loss(logits, targets) -> float:
    """Mean cross-entropy of the head's softmax against soft target rows."""
    a = _check_logits(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != a.shape:
        raise InputError(f"targets shape {t.shape} does not match logits {a.shape}")
    return float(-(t * _log_softmax(a)).sum(axis=1).mean())


def sord_loss_grad(logits, targets) -> np.ndarray:
    """d(sord_loss)/d(logits): (softmax - targets) / batch."""
    a = _check_logits(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != a.shape:
        raise InputError(f"targets shape {t.shape} does not match logits {a.shape}")
    return (softmax(a) - t) / a.shape[0]


def predict(logits, ranks, mode: str = "expectation") -> np.ndarray:
    """Per-sample predicted rank.

    ``argmax`` returns the rank of the highest logit (first one on ties);
    ``expectation`` returns the softmax-weighted mean rank.
    """
    a = _check_logits(logits)
    r = np.asarray(ranks, dtype=np.float64).reshape(-1)
    if r.size != a.shape[1]:
        raise InputError(f"{a.shape[1]} logit columns but {r.size} ranks")
    if mode == "argmax":
        return r[np.argmax(a, axis=1)]
    if mode == "expectation":
        return softmax(a) @ r
    raise InputError(f"unknown prediction mode {mode!r}")
