"""
Losses: softmax cross-entropy, binary log loss and weighted-boundary log loss.

Probabilities are clamped to [ε, 1−ε] with ε = 1e-7; where the clamp is
active the gradient is zero. Every loss is a mean over samples and pixels and
is evaluated in float64 regardless of the network dtype.
"""
import numpy as np

from histotnet.errors import ValidationError
from histotnet.nn.autograd import Tensor, _accumulate, _result

EPS = 1e-7


def softmax_ce(logits: Tensor, labels, eps: float = EPS) -> Tensor:
    """
    Mean cross-entropy of softmax(logits) against integer labels.

    Args:
        logits: N×K scores or N×K×H×W score maps
        labels: N or N×H×W integer class ids in 0..K-1
    """
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got {labels.dtype}")
    z = logits.data.astype(np.float64)
    if z.ndim not in (2, 4):
        raise ValidationError(f"logits must be N×K or N×K×H×W, got {z.shape}")
    classes = z.shape[1]
    expected = (z.shape[0],) + z.shape[2:]
    if labels.shape != expected:
        raise ValidationError(f"labels shape {labels.shape} != {expected}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValidationError(f"labels must lie in 0..{classes - 1}")

    flat = np.moveaxis(z, 1, -1).reshape(-1, classes)
    targets = labels.reshape(-1).astype(np.intp)
    rows = np.arange(targets.size)
    shifted = flat - flat.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    picked = probs[rows, targets]
    loss = -np.mean(np.log(np.clip(picked, eps, 1 - eps)))

    def backward(grad: np.ndarray) -> None:
        d = probs.copy()
        d[rows, targets] -= 1.0
        active = (picked >= eps) & (picked <= 1 - eps)
        d *= (active * (float(grad) / targets.size))[:, None]
        d = np.moveaxis(d.reshape(z.shape[:1] + z.shape[2:] + (classes,)), -1, 1)
        _accumulate(logits, d)

    return _result(np.asarray(loss), (logits,), backward)


def _check_pair(prob: Tensor, target: np.ndarray, name: str) -> None:
    if target.shape != prob.shape:
        raise ValidationError(f"{name} shape {target.shape} != prediction shape {prob.shape}")
    if not np.all(np.isfinite(target)) or target.min() < 0 or target.max() > 1:
        raise ValidationError(f"{name} must lie in [0, 1]")


def _soft_logloss(prob: Tensor, target: np.ndarray, eps: float) -> Tensor:
    p = prob.data.astype(np.float64)
    clipped = np.clip(p, eps, 1 - eps)
    loss = -np.mean(target * np.log(clipped) + (1 - target) * np.log(1 - clipped))

    def backward(grad: np.ndarray) -> None:
        active = (p >= eps) & (p <= 1 - eps)
        d = (-target / clipped + (1 - target) / (1 - clipped)) * active
        _accumulate(prob, d * (float(grad) / p.size))

    return _result(np.asarray(loss), (prob,), backward)


def binary_logloss(prob: Tensor, target, eps: float = EPS) -> Tensor:
    """Mean binary log loss of probabilities against targets in [0, 1]."""
    target = np.asarray(target, dtype=np.float64)
    _check_pair(prob, target, "target")
    return _soft_logloss(prob, target, eps)


def weighted_boundary_logloss(prob: Tensor, mask, weights, eps: float = EPS) -> Tensor:
    """
    Log loss against the soft target weights·mask.

    Positive pixels close to a region boundary get a target below 1, so the
    network is not pushed to be confident exactly where annotations are
    least reliable.
    """
    mask = np.asarray(mask, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _check_pair(prob, mask, "mask")
    _check_pair(prob, weights, "weights")
    return _soft_logloss(prob, weights * mask, eps)
