"""Cross-entropy, symmetric KL between dropout passes, and the R-Drop objective.

The tape versions take nodes and return scalar nodes.  ``*_value`` helpers
evaluate the same quantities on plain arrays.
"""

from __future__ import annotations

import numpy as np

from .autograd import Node, ShapeError, Tape

__all__ = [
    "PROB_FLOOR",
    "rdrop_loss",
    "sce_loss",
    "sce_value",
    "sym_kl_loss",
    "sym_kl_value",
]

PROB_FLOOR = 1e-12
_LOG_FLOOR = float(np.log(PROB_FLOOR))


def _check_labels(labels, batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels: expected shape ({batch},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels


def sce_loss(tape: Tape, logits: Node, labels) -> Node:
    """Batch mean of ``-log softmax(logits)[label]``."""
    batch, classes = logits.shape
    labels = _check_labels(labels, batch, classes)
    picked = tape.gather(tape.log_softmax(logits), labels)
    return tape.scale(tape.mean(picked), -1.0)


def sym_kl_loss(tape: Tape, logp: Node, logq: Node) -> Node:
    """Batch mean of KL(p||q) + KL(q||p) from two log-probability nodes.

    Uses the identity KL(p||q) + KL(q||p) = sum (p - q)(log p - log q), with
    log-probabilities floored at ``log(PROB_FLOOR)``.
    """
    if logp.shape != logq.shape:
        raise ShapeError(f"sym_kl: shape mismatch {logp.shape} vs {logq.shape}")
    lp = tape.clamp_min(logp, _LOG_FLOOR)
    lq = tape.clamp_min(logq, _LOG_FLOOR)
    diff = tape.mul(tape.sub(tape.exp(logp), tape.exp(logq)), tape.sub(lp, lq))
    per_row = tape.sum(diff, axis=1)
    return tape.mean(per_row)


def rdrop_loss(tape: Tape, sce0: Node, sce1: Node, kl: Node, weight: float) -> Node:
    """``0.5 * (sce0 + sce1) + weight * kl``."""
    if weight < 0:
        raise ValueError(f"consistency weight must be >= 0, got {weight}")
    ce = tape.scale(tape.add(sce0, sce1), 0.5)
    return tape.add(ce, tape.scale(kl, weight))


def sce_value(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def sym_kl_value(p, q) -> float:
    """Batch-mean symmetric KL between rows of two probability arrays."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ShapeError(f"sym_kl: shape mismatch {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be non-negative")
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    return float(((p - q) * (lp - lq)).sum(axis=1).mean())
