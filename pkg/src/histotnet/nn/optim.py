"""
Adam with a step-halving learning-rate schedule.

lr(epoch) = lr0 · 2^(−⌊epoch / period⌋); with the defaults the rate starts
at 0.01 and halves every 20 epochs.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from histotnet.errors import GradientError, ValidationError
from histotnet.nn.autograd import Tensor


@dataclass
class OptimizerState:
    """Schedule settings plus Adam moments (one m, v pair per parameter)."""

    lr0: float = 0.01
    halving_period: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epoch: int = 0
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be positive, got {self.lr0}")
        if self.halving_period < 1:
            raise ValidationError(f"halving_period must be >= 1, got {self.halving_period}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")

    @property
    def lr(self) -> float:
        return lr_at(self, self.epoch)


def lr_at(state: OptimizerState, epoch: int) -> float:
    """Learning rate for `epoch` under the halving schedule."""
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")
    return state.lr0 * 2.0 ** -(epoch // state.halving_period)


def adam_step(state: OptimizerState, params: Sequence[np.ndarray],
              grads: Sequence[Optional[np.ndarray]]) -> List[np.ndarray]:
    """
    One bias-corrected Adam update at the current epoch's learning rate.

    Args:
        state: Mutated in place (moments, step counter)
        params: Current parameter arrays
        grads: One gradient per parameter; None means zero

    Returns:
        Updated parameter arrays, same dtypes as `params`

    Raises:
        GradientError: If any gradient holds NaN or Inf
    """
    if len(params) != len(grads):
        raise ValidationError(f"{len(params)} parameters but {len(grads)} gradients")
    grads = [np.zeros_like(p) if g is None else np.asarray(g) for p, g in zip(params, grads)]
    for index, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValidationError(f"Gradient {index} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"Non-finite gradient for parameter {index}")

    if not state.m:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    elif len(state.m) != len(params):
        raise ValidationError("Optimizer state was created for a different parameter list")

    state.step += 1
    lr = lr_at(state, state.epoch)
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step

    updated = []
    for index, (p, g) in enumerate(zip(params, grads)):
        g = g.astype(np.float64)
        state.m[index] = state.beta1 * state.m[index] + (1 - state.beta1) * g
        state.v[index] = state.beta2 * state.v[index] + (1 - state.beta2) * g * g
        m_hat = state.m[index] / correction1
        v_hat = state.v[index] / correction2
        step = lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated.append((p.astype(np.float64) - step).astype(p.dtype))
    return updated


class Adam:
    """Applies `adam_step` to a module's parameter Tensors."""

    def __init__(self, parameters: Sequence[Tensor], state: Optional[OptimizerState] = None):
        self.parameters = list(parameters)
        self.state = state or OptimizerState()

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch

    @property
    def lr(self) -> float:
        return self.state.lr

    def zero_grad(self) -> None:
        for tensor in self.parameters:
            tensor.grad = None

    def step(self) -> None:
        params = [tensor.data for tensor in self.parameters]
        grads = [tensor.grad for tensor in self.parameters]
        for tensor, value in zip(self.parameters, adam_step(self.state, params, grads)):
            tensor.data = value
