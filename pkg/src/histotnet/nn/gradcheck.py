"""
Central finite-difference gradient checks.

Analytic gradients come from one backward pass; numeric ones from
(f(x+h) − f(x−h)) / 2h on a random sample of entries per tensor. The error
for a tensor is ‖a − n‖ / (‖a‖ + ‖n‖) over the sampled entries.

Checks run in float64: a float32 forward pass carries ~1e-7 relative noise,
which divided by 2h = 2e-3 is already the size of the tolerance.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from rich.table import Table

from histotnet.core.rng import Rng
from histotnet.nn.autograd import Tensor, weighted_sum
from histotnet.nn.layers import Module

DEFAULT_TOLERANCE = 1e-3
DEFAULT_STEP = 1e-3


class GradcheckConfig(BaseModel):
    """`[gradcheck]` section: the small network checked by `histotnet gradcheck`."""

    model_config = ConfigDict(extra="forbid")

    arch: Literal["tnet", "unet", "classifier"] = Field(default="tnet", description="Network")
    depth: int = Field(default=2, ge=1, description="T-Net levels")
    base_channels: int = Field(default=2, ge=1, description="Top-level channels")
    skip_convs: int = Field(default=1, ge=0, description="Conv blocks per skip (tnet only)")
    out_classes: int = Field(default=1, ge=1, description="Output channels")
    size: int = Field(default=8, ge=2, description="Input side")
    tolerance: float = Field(default=DEFAULT_TOLERANCE, gt=0.0, description="Max relative error")
    step: float = Field(default=DEFAULT_STEP, gt=0.0, description="Finite-difference step h")
    max_entries: int = Field(default=24, ge=1, description="Entries sampled per tensor")
    seed: int = Field(default=0, ge=0, description="Weights, input and sampling seed")


@dataclass
class GradcheckReport:
    """Per-tensor relative errors and the verdict."""

    errors: Dict[str, float] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE
    step: float = DEFAULT_STEP
    checked_entries: int = 0
    skipped_entries: int = 0
    unchecked: List[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.checked_entries > 0 and not self.failures()

    def failures(self) -> List[str]:
        failed = [name for name, error in self.errors.items() if error >= self.tolerance]
        return failed + [name for name in self.unchecked if name not in failed]

    def to_table(self) -> Table:
        table = Table(title=f"Gradient check (h={self.step:g}, tol={self.tolerance:g})")
        table.add_column("Tensor", style="cyan")
        table.add_column("Rel. error", justify="right")
        table.add_column("Status")
        for name, error in self.errors.items():
            if name in self.unchecked:
                table.add_row(name, "-", "[red]SKIPPED[/red]")
                continue
            status = "[green]ok[/green]" if error < self.tolerance else "[red]FAIL[/red]"
            table.add_row(name, f"{error:.3e}", status)
        return table


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.linalg.norm(analytic)
    n = np.linalg.norm(numeric)
    if a + n < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / (a + n))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    names: Optional[Sequence[str]] = None, step: float = DEFAULT_STEP,
                    tolerance: float = DEFAULT_TOLERANCE, max_entries: int = 24,
                    seed: int = 0) -> GradcheckReport:
    """
    Compare backward() against finite differences of a scalar loss.

    Args:
        loss_fn: Recomputes the scalar loss from the current tensor values
        tensors: Tensors (requires_grad=True) to perturb
        names: Labels for the report
        max_entries: Entries sampled per tensor
    """
    names = list(names) if names is not None else [f"tensor_{i}" for i in range(len(tensors))]
    for tensor in tensors:
        tensor.grad = None
    loss_fn().backward()
    analytic_all = [
        np.zeros_like(t.data) if t.grad is None else np.array(t.grad, copy=True) for t in tensors
    ]

    centre = float(loss_fn().data)
    rng = Rng(seed)
    report = GradcheckReport(tolerance=tolerance, step=step)
    for name, tensor, analytic in zip(names, tensors, analytic_all):
        size = tensor.data.size
        picks = rng.choice(size, size=min(size, max_entries), replace=False)
        flat = tensor.data.reshape(-1)
        kept, numeric = [], []
        for index in picks:
            value = _central_difference(loss_fn, flat, int(index), centre, step, tolerance)
            if value is None:
                report.skipped_entries += 1
                continue
            kept.append(index)
            numeric.append(value)
        if picks.size and not kept:
            # every sampled entry sat on a kink; nothing was compared
            report.unchecked.append(name)
        report.errors[name] = relative_error(analytic.reshape(-1)[kept], np.asarray(numeric))
        report.checked_entries += len(kept)
    return report


def _central_difference(loss_fn: Callable[[], Tensor], flat: np.ndarray, index: int,
                        centre: float, step: float, tolerance: float,
                        refinements: int = 3) -> Optional[float]:
    """
    Central difference at `index`, or None if every step straddles a kink.

    A relu or max-pool switch inside [x−h, x+h] shows up as disagreeing
    one-sided slopes; the step is then divided by 10 and retried.
    """
    original = flat[index]
    h = step
    try:
        for _ in range(refinements):
            flat[index] = original + h
            plus = float(loss_fn().data)
            flat[index] = original - h
            minus = float(loss_fn().data)
            forward, backward = (plus - centre) / h, (centre - minus) / h
            if abs(forward - backward) <= tolerance * max(abs(forward), abs(backward)) + 1e-9:
                return (plus - minus) / (2 * h)
            h /= 10.0
        return None
    finally:
        flat[index] = original


def gradcheck(model: Module, inputs: np.ndarray, tolerance: float = DEFAULT_TOLERANCE,
              step: float = DEFAULT_STEP, max_entries: int = 24, seed: int = 0,
              check_input: bool = True) -> GradcheckReport:
    """
    Gradient check of a whole network.

    The scalar objective is Σ out·R for a fixed random R, so every output
    entry contributes. The model is evaluated in float64 and its original
    parameter values are restored afterwards.
    """
    originals = [tensor.data for tensor in model.parameters()]
    try:
        model.astype(np.float64)
        x = Tensor(np.array(inputs, dtype=np.float64), requires_grad=check_input)
        projection = Rng(seed).normal(size=model(x).shape)

        def loss_fn() -> Tensor:
            return weighted_sum(model(x), projection)

        named = list(model.named_parameters())
        tensors = [tensor for _, tensor in named]
        names = [name for name, _ in named]
        if check_input:
            tensors.append(x)
            names.append("input")
        return check_gradients(loss_fn, tensors, names, step, tolerance, max_entries, seed)
    finally:
        for tensor, data in zip(model.parameters(), originals):
            tensor.data = data
            tensor.grad = None
