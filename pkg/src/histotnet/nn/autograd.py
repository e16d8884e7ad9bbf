"""
Reverse-mode differentiation over numpy arrays.

A Tensor remembers the tensors it was computed from and a closure that maps
its output gradient to gradients of those parents. `Tensor.backward()` visits
the graph in reverse topological order and accumulates into `.grad`.

Every op keeps the dtype of its inputs, so the same graph runs in float32
for training and in float64 for finite-difference checks.
"""
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from histotnet.errors import ValidationError

Backward = Callable[[np.ndarray], None]


class Tensor:
    """N-d array with an optional gradient and the recipe to back-propagate it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Backward] = None,
    ):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Back-propagate from this tensor.

        Args:
            grad: Gradient of the final objective w.r.t. this tensor.
                Defaults to 1 for scalars.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad)
        if grad.shape != self.data.shape:
            raise ValidationError(f"Gradient shape {grad.shape} != tensor shape {self.shape}")
        if not np.all(np.isfinite(grad)):
            raise ValidationError("Gradient contains NaN or Inf")

        order = _topological_order(self)
        for node in order:
            if node is not self and node._backward is not None:
                node.grad = None
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = np.asarray(grad, dtype=tensor.data.dtype)
    if tensor.grad is None:
        tensor.grad = np.array(grad, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Backward) -> Tensor:
    requires = any(parent.requires_grad for parent in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _check_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValidationError(f"{op} expects an N×C×H×W tensor, got shape {x.shape}")


# ============================================================================
# Convolution and pooling
# ============================================================================

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Stride-1 convolution (cross-correlation) with zero same-padding.

    Args:
        x: N×C×H×W input
        weight: O×C×k×k kernel, k odd
        bias: Optional length-O bias
    """
    _check_4d(x, "conv2d")
    n, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = weight.shape
    if channels != in_channels:
        raise ValidationError(f"conv2d expects {in_channels} input channels, got {channels}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError("conv2d kernels must have odd size")
    ph, pw = kh // 2, kw // 2

    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad: np.ndarray) -> None:
        if weight.requires_grad:
            _accumulate(weight, np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dpadded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(grad, weight.data[:, :, i, j], axes=([1], [0]))
                    dpadded[:, :, i:i + height, j:j + width] += contrib.transpose(0, 3, 1, 2)
            _accumulate(x, dpadded[:, :, ph:ph + height, pw:pw + width])

    return _result(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, np.zeros((), dtype=x.dtype))

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * positive)

    return _result(out, (x,), backward)


def _windows(data: np.ndarray) -> np.ndarray:
    n, c, h, w = data.shape
    h2, w2 = h // 2, w // 2
    cropped = data[:, :, : 2 * h2, : 2 * w2]
    return cropped.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)


def _unwindow(windows: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h2, w2, _ = windows.shape
    blocks = windows.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    full = np.zeros(shape, dtype=windows.dtype)
    full[:, :, : 2 * h2, : 2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
    return full


def _check_poolable(x: Tensor, op: str) -> None:
    _check_4d(x, op)
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ValidationError(f"{op} needs spatial dims >= 2, got {x.shape[2:]}")


def max_pool2(x: Tensor) -> Tensor:
    """2×2 max pooling, stride 2; an odd trailing row/column is dropped."""
    _check_poolable(x, "max_pool2")
    windows = _windows(x.data)
    index = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, index, axis=-1)[..., 0]

    def backward(grad: np.ndarray) -> None:
        routed = np.zeros(windows.shape, dtype=grad.dtype)
        np.put_along_axis(routed, index, grad[..., None], axis=-1)
        _accumulate(x, _unwindow(routed, x.shape))

    return _result(out, (x,), backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2×2 average pooling, stride 2; an odd trailing row/column is dropped."""
    _check_poolable(x, "avg_pool2")
    windows = _windows(x.data)
    out = windows.mean(axis=-1)

    def backward(grad: np.ndarray) -> None:
        spread = np.repeat((grad / 4.0)[..., None], 4, axis=-1)
        _accumulate(x, _unwindow(spread, x.shape))

    return _result(out, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour ×2 upsampling."""
    _check_4d(x, "upsample2")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis` (channels by default)."""
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(grad: np.ndarray) -> None:
        for tensor, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(start, stop)
            _accumulate(tensor, grad[tuple(index)])

    return _result(out, tuple(tensors), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer: N×F @ F×O (+ O)."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValidationError(f"dense expects N×{weight.shape[0]} input, got {x.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, grad @ weight.data.T)
        if weight.requires_grad:
            _accumulate(weight, x.data.T @ grad)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, grad.sum(axis=0))

    return _result(out, parents, backward)


def _cell_edges(size: int, cells: int) -> List[int]:
    return [(i * size) // cells for i in range(cells + 1)]


def spp(x: Tensor, levels: int) -> Tensor:
    """
    Average spatial pyramid pooling.

    Level l splits the plane into an l×l grid of near-equal cells and
    averages each. Output is N × C·Σ l², ordered by level, then channel,
    then cell (row-major). Level 1 alone is global average pooling.
    """
    _check_4d(x, "spp")
    if levels < 1:
        raise ValidationError(f"spp needs at least one level, got {levels}")
    n, c, height, width = x.shape
    if height < levels or width < levels:
        raise ValidationError(f"spp with {levels} levels needs H, W >= {levels}, got {height}×{width}")

    pieces = []
    for level in range(1, levels + 1):
        rows, cols = _cell_edges(height, level), _cell_edges(width, level)
        pooled = np.empty((n, c, level, level), dtype=x.dtype)
        for i in range(level):
            for j in range(level):
                cell = x.data[:, :, rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
                pooled[:, :, i, j] = cell.mean(axis=(2, 3))
        pieces.append(pooled.reshape(n, c * level * level))
    out = np.concatenate(pieces, axis=1)

    def backward(grad: np.ndarray) -> None:
        dx = np.zeros(x.shape, dtype=grad.dtype)
        offset = 0
        for level in range(1, levels + 1):
            rows, cols = _cell_edges(height, level), _cell_edges(width, level)
            width_l = c * level * level
            g = grad[:, offset:offset + width_l].reshape(n, c, level, level)
            for i in range(level):
                for j in range(level):
                    area = (rows[i + 1] - rows[i]) * (cols[j + 1] - cols[j])
                    dx[:, :, rows[i]:rows[i + 1], cols[j]:cols[j + 1]] += (
                        g[:, :, i, j][:, :, None, None] / area
                    )
            offset += width_l
        _accumulate(x, dx)

    return _result(out, (x,), backward)


def spp_length(channels: int, levels: int) -> int:
    """C·Σ_{l=1..L} l²."""
    return channels * sum(level * level for level in range(1, levels + 1))


# ============================================================================
# Activations and reductions
# ============================================================================

def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * out * (1 - out))

    return _result(out, (x,), backward)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> None:
        inner = (grad * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (grad - inner))

    return _result(out, (x,), backward)


def select_channel(x: Tensor, index: int) -> Tensor:
    """x[:, index] for an N×C×... tensor."""
    out = x.data[:, index]

    def backward(grad: np.ndarray) -> None:
        full = np.zeros(x.shape, dtype=grad.dtype)
        full[:, index] = grad
        _accumulate(x, full)

    return _result(out, (x,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar Σ x·w; a fixed random projection of a network output."""
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ValidationError(f"weights shape {weights.shape} != tensor shape {x.shape}")
    out = np.asarray((x.data * weights).sum())

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * weights)

    return _result(out, (x,), backward)


def crop_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Top-left height×width window of an N×C×H×W tensor."""
    _check_4d(x, "crop_spatial")
    if height > x.shape[2] or width > x.shape[3]:
        raise ValidationError(f"Cannot crop {x.shape[2:]} to {height}×{width}")
    out = x.data[:, :, :height, :width]

    def backward(grad: np.ndarray) -> None:
        full = np.zeros(x.shape, dtype=grad.dtype)
        full[:, :, :height, :width] = grad
        _accumulate(x, full)

    return _result(np.ascontiguousarray(out), (x,), backward)
