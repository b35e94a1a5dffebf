"""Output activations and the task losses.

Losses follow the per-clip sum convention (one-hot sum for the scene loss,
sum over frames and classes for the event loss) and average over the batch
when given batched inputs.  Both losses are fused with their activation: the
returned gradient is taken with respect to the pre-activation logits, giving
the usual (prediction - target) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LabelError

PROB_CLAMP = 1e-7  # clamp inside the logs only; gradients use raw outputs


@dataclass(frozen=True)
class LossWeights:
    """Constant task weights: alpha scales the scene loss, beta the event loss."""
    alpha: float = 0.0001
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("at least one loss weight must be positive")


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def _check_one_hot(s: np.ndarray):
    if not np.isin(s, (0, 1)).all() or not np.all(s.sum(axis=-1) == 1):
        raise LabelError("scene target must be one-hot")


def scene_ce_loss(y: np.ndarray, s: np.ndarray):
    """Cross entropy between softmax output y and one-hot target s.

    Accepts a single probability vector or a (batch, classes) matrix; batches
    are averaged.  Returns (loss, gradient w.r.t. the pre-softmax logits).
    """
    _check_one_hot(s)
    y2 = np.atleast_2d(y)
    s2 = np.atleast_2d(s)
    b = y2.shape[0]
    loss = -(s2 * np.log(np.clip(y2, PROB_CLAMP, None))).sum() / b
    grad = (y2 - s2) / b
    return loss, grad.reshape(y.shape)


def event_bce_loss(y: np.ndarray, z: np.ndarray):
    """Binary cross entropy between sigmoid outputs y and a binary roll z.

    y and z are (T, M) for one clip or (batch, T, M); the loss sums over
    frames and classes and averages over the batch.  Returns (loss, gradient
    w.r.t. the pre-sigmoid logits).
    """
    if not np.isin(z, (0, 1)).all():
        raise LabelError("event roll must be binary")
    b = y.shape[0] if y.ndim == 3 else 1
    yc = np.clip(y, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(z * np.log(yc) + (1.0 - z) * np.log(1.0 - yc)).sum() / b
    grad = (y - z) / b
    return loss, grad


def mtl_loss(l_scene: float, l_event: float, w: LossWeights) -> float:
    """Weighted multitask objective: alpha * scene loss + beta * event loss."""
    return w.alpha * l_scene + w.beta * l_event
