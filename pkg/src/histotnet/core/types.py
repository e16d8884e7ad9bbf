"""
Domain value types: images, label masks, probability maps and prediction matrices.

All types wrap a read-only numpy array. Constructors validate their
invariants and raise ValidationError; nothing is mutated after construction.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from histotnet.errors import ValidationError

NUM_CLASSES = 4
CLASS_NAMES = ("Normal", "Benign", "InSitu", "Invasive")
NORMAL, BENIGN, IN_SITU, INVASIVE = range(NUM_CLASSES)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Image:
    """
    H×W×C image of 8-bit or 32-bit float samples.

    Attributes:
        data: Array of shape (height, width, channels), dtype uint8 or float32
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValidationError(f"Image must be H×W×C, got shape {data.shape}")
        if data.size == 0:
            raise ValidationError("Image is empty")
        if data.dtype == np.uint8:
            pass
        elif np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
            if not np.all(np.isfinite(data)):
                raise ValidationError("Float image contains NaN or Inf")
        else:
            raise ValidationError(f"Unsupported image dtype {data.dtype}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def is_float(self) -> bool:
        return self.data.dtype == np.float32

    @property
    def samples(self) -> np.ndarray:
        """Row-major, channel-interleaved samples."""
        return self.data.reshape(-1)

    def to_chw(self) -> np.ndarray:
        """Float32 C×H×W copy, the layout networks consume."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype=np.float32)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """H×W array of class ids in {0, 1, 2, 3}."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"LabelMask must be H×W, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise ValidationError(
                f"LabelMask values must lie in 0..{NUM_CLASSES - 1}, "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def is_binary(self) -> bool:
        return bool(np.all(self.labels <= 1))

    def histogram(self) -> np.ndarray:
        """Pixel count per class."""
        return np.bincount(self.labels.reshape(-1), minlength=NUM_CLASSES)


def require_binary(mask: LabelMask, name: str = "mask") -> LabelMask:
    """Check that a LabelMask only holds 0/1 (a BinaryMask)."""
    if not mask.is_binary():
        raise ValidationError(f"{name} must be binary (values in {{0, 1}})")
    return mask


@dataclass(frozen=True, eq=False)
class ProbMap:
    """
    K×H×W probability map (channel-major).

    Attributes:
        values: float32 array of shape (classes, height, width), values in [0, 1]
        normalized: When True, per-pixel probabilities sum to 1 ± 1e-5
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3:
            raise ValidationError(f"ProbMap must be K×H×W, got shape {values.shape}")
        values = values.astype(np.float32)
        if not np.all(np.isfinite(values)):
            raise ValidationError("ProbMap contains NaN or Inf")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError(
                f"ProbMap values must lie in [0, 1], found [{values.min()}, {values.max()}]"
            )
        if self.normalized:
            sums = values.astype(np.float64).sum(axis=0)
            if values.size and np.max(np.abs(sums - 1.0)) > 1e-5:
                raise ValidationError("Normalized ProbMap does not sum to 1 per pixel")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def classes(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def channel(self, index: int = 0) -> np.ndarray:
        return self.values[index]

    def argmax(self) -> LabelMask:
        return LabelMask(np.argmax(self.values, axis=0))


def as_pred_matrix(values: np.ndarray) -> np.ndarray:
    """
    Validate a P×K matrix of per-patch class probabilities.

    A 1-D input is treated as a single column (one-vs-all networks).
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or matrix.shape[0] == 0 or matrix.shape[1] == 0:
        raise ValidationError(f"PredMatrix must be a non-empty P×K matrix, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("PredMatrix contains NaN or Inf")
    if matrix.min() < 0.0 or matrix.max() > 1.0:
        raise ValidationError("PredMatrix probabilities must lie in [0, 1]")
    return matrix
