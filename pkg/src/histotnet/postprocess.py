"""
Postprocessing of binary probability maps.

Chain: Gaussian blur → threshold → morphological closing → 4-connected
components → power-mean area filter. Blurring closes small holes in
heterogeneous patch-level maps; the closing merges nearby fragments; the
area filter drops components smaller than (mean areaᵃ)^(1/a).
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from histotnet.core.types import LabelMask, ProbMap, require_binary
from histotnet.errors import ValidationError

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class PostprocessConfig(BaseModel):
    """`[postprocess]` section. sigma defaults to blur_kernel / 6."""

    model_config = ConfigDict(extra="forbid")

    blur_kernel: int = Field(default=11, ge=1, description="Odd Gaussian kernel side k")
    blur_sigma: Optional[float] = Field(default=None, gt=0.0, description="Gaussian sigma (k/6 if unset)")
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0, description="Foreground threshold t")
    closing_size: int = Field(default=11, ge=1, description="Odd square closing element side")
    area_exponent: float = Field(default=2.0, gt=0.0, description="Power-mean exponent a")

    @field_validator("blur_kernel", "closing_size")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"must be odd, got {value}")
        return value

    @model_validator(mode="after")
    def _default_sigma(self) -> "PostprocessConfig":
        if self.blur_sigma is None:
            self.blur_sigma = self.blur_kernel / 6.0
        return self


@dataclass(frozen=True)
class Component:
    """One 4-connected foreground region."""

    label: int
    pixels: np.ndarray  # (area, 2) row/col coordinates
    area: int

    @property
    def bbox(self):
        rows, cols = self.pixels[:, 0], self.pixels[:, 1]
        return int(rows.min()), int(cols.min()), int(rows.max()) + 1, int(cols.max()) + 1


def _single_channel(pmap: ProbMap) -> np.ndarray:
    if pmap.classes != 1:
        raise ValidationError(f"Expected a single-channel ProbMap, got {pmap.classes} channels")
    return pmap.values[0].astype(np.float64)


def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of odd length k."""
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"Kernel size must be odd and >= 1, got {k}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(k) - k // 2
    kernel = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_blur(pmap: ProbMap, k: int, sigma: float) -> ProbMap:
    """
    Separable k×k Gaussian blur.

    Near the border the kernel is renormalized over the pixels that exist,
    so a constant map stays constant.
    """
    kernel = gaussian_kernel(k, sigma)
    values = _single_channel(pmap)

    def blur(array: np.ndarray) -> np.ndarray:
        out = ndimage.correlate1d(array, kernel, axis=0, mode="constant", cval=0.0)
        return ndimage.correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)

    support = blur(np.ones_like(values))
    return ProbMap(np.clip(blur(values) / support, 0.0, 1.0)[None])


def threshold(pmap: ProbMap, t: float) -> LabelMask:
    """1 where value >= t."""
    return LabelMask((_single_channel(pmap) >= t).astype(np.uint8))


def _square(size: int) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"Structuring element size must be odd and >= 1, got {size}")
    return np.ones((size, size), dtype=bool)


def closing(mask: LabelMask, size: int) -> LabelMask:
    """
    Dilation then erosion with a size×size square.

    The plane is treated as unbounded (background outside), so the result
    always contains the input and closing twice changes nothing.
    """
    element = _square(size)
    require_binary(mask)
    radius = size // 2
    padded = np.pad(mask.labels.astype(bool), radius + 1)
    dilated = ndimage.binary_dilation(padded, structure=element)
    closed = ndimage.binary_erosion(dilated, structure=element, border_value=0)
    inner = closed[radius + 1:-(radius + 1), radius + 1:-(radius + 1)]
    return LabelMask(inner.astype(np.uint8))


def components(mask: LabelMask) -> List[Component]:
    """4-connected components in raster order of their first pixel."""
    require_binary(mask)
    labels, count = ndimage.label(mask.labels, structure=_FOUR_CONNECTED)
    if count == 0:
        return []
    order = np.argsort(labels, axis=None, kind="stable")
    flat = labels.reshape(-1)[order]
    starts = np.searchsorted(flat, np.arange(1, count + 2))
    width = mask.width
    found = []
    for label in range(1, count + 1):
        indices = order[starts[label - 1]:starts[label]]
        pixels = np.stack(np.divmod(indices, width), axis=1)
        found.append(Component(label, pixels, int(indices.size)))
    return found


def area_threshold(areas: Sequence[int], a: float) -> float:
    """Power mean (mean areaᵃ)^(1/a), computed in float64."""
    if a <= 0:
        raise ValidationError(f"Area exponent must be positive, got {a}")
    values = np.asarray(areas, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("No components: area threshold undefined")
    return float(np.mean(values ** a) ** (1.0 / a))


def area_filter(found: Sequence[Component], a: float) -> List[Component]:
    """Drop components whose area is strictly less than the power-mean threshold."""
    if a <= 0:
        raise ValidationError(f"Area exponent must be positive, got {a}")
    if not found:
        return []
    limit = area_threshold([c.area for c in found], a) * (1.0 - 1e-12)
    return [c for c in found if c.area >= limit]


def paint(found: Sequence[Component], shape) -> LabelMask:
    out = np.zeros(shape, dtype=np.uint8)
    for component in found:
        out[component.pixels[:, 0], component.pixels[:, 1]] = 1
    return LabelMask(out)


@dataclass
class PostprocessStages:
    """Every intermediate result of the chain (for plots and debugging)."""

    blurred: ProbMap
    thresholded: LabelMask
    closed: LabelMask
    components: List[Component] = field(default_factory=list)
    kept: List[Component] = field(default_factory=list)
    result: Optional[LabelMask] = None
    area_limit: Optional[float] = None


def postprocess_stages(pmap: ProbMap, config: Optional[PostprocessConfig] = None) -> PostprocessStages:
    config = config or PostprocessConfig()
    blurred = gaussian_blur(pmap, config.blur_kernel, config.blur_sigma)
    thresholded = threshold(blurred, config.threshold)
    closed = closing(thresholded, config.closing_size)
    found = components(closed)
    kept = area_filter(found, config.area_exponent)
    limit = area_threshold([c.area for c in found], config.area_exponent) if found else None
    return PostprocessStages(blurred, thresholded, closed, found, kept, paint(kept, closed.shape), limit)


def postprocess_chain(pmap: ProbMap, config: Optional[PostprocessConfig] = None) -> LabelMask:
    """Blur → threshold → close → components → area filter; a binary LabelMask."""
    return postprocess_stages(pmap, config).result


__all__ = [
    "Component",
    "PostprocessConfig",
    "PostprocessStages",
    "area_filter",
    "area_threshold",
    "closing",
    "components",
    "gaussian_blur",
    "gaussian_kernel",
    "paint",
    "postprocess_chain",
    "postprocess_stages",
    "threshold",
]
