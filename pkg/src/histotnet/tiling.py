"""
Preprocessing and patch extraction.

- Channel-wise mean subtraction, over the whole image or per patch
- Block-mean downsampling of images, majority-vote downsampling of masks
- Uniform random patches for training, strided grids for inference

Grids never pad: a trailing margin narrower than the stride is not covered,
which is what makes a 2048×1536 image with 500×500 patches at stride 100
yield 16×11 = 176 patches.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from histotnet.core.rng import Rng
from histotnet.core.types import NUM_CLASSES, Image, LabelMask, ProbMap
from histotnet.errors import ValidationError

Origin = Tuple[int, int]


class MeanScope(str, Enum):
    """Where channel means are computed for mean subtraction."""

    IMAGE = "image"
    PATCH = "patch"
    NONE = "none"


class TilingConfig(BaseModel):
    """`[tiling]` section: inference grid and preprocessing."""

    model_config = ConfigDict(extra="forbid")

    patch_size: int = Field(default=500, ge=1, description="Square patch side in pixels")
    stride: int = Field(default=100, ge=1, description="Grid stride in pixels")
    downsample_factor: int = Field(default=40, ge=1, description="Whole-slide downsampling factor")
    mean_scope: MeanScope = Field(default=MeanScope.PATCH, description="image | patch | none")

    def patch_spec(self) -> "PatchSpec":
        return PatchSpec(self.patch_size, self.patch_size, self.stride)


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry. `stride` is only used by grid extraction."""

    patch_h: int
    patch_w: int
    stride: int = 1

    def __post_init__(self) -> None:
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValidationError(f"Patch dims must be positive, got {self.patch_h}×{self.patch_w}")
        if self.stride < 1:
            raise ValidationError(f"Stride must be >= 1, got {self.stride}")

    def check_fits(self, height: int, width: int) -> None:
        if self.patch_h > height or self.patch_w > width:
            raise ValidationError(
                f"Patch {self.patch_h}×{self.patch_w} is larger than image {height}×{width}"
            )


@dataclass(frozen=True)
class PatchGrid:
    """Top-left corners of grid patches in row-major order."""

    origins: Tuple[Origin, ...]
    patch_h: int
    patch_w: int
    height: int
    width: int

    def __len__(self) -> int:
        return len(self.origins)

    def __iter__(self) -> Iterator[Origin]:
        return iter(self.origins)

    @property
    def rows(self) -> int:
        return len({row for row, _ in self.origins})

    @property
    def cols(self) -> int:
        return len({col for _, col in self.origins})


def grid_count(height: int, width: int, spec: PatchSpec) -> int:
    """(⌊(H−h)/s⌋+1)·(⌊(W−w)/s⌋+1)."""
    spec.check_fits(height, width)
    return ((height - spec.patch_h) // spec.stride + 1) * ((width - spec.patch_w) // spec.stride + 1)


def grid_origins(height: int, width: int, spec: PatchSpec) -> PatchGrid:
    """Grid over an image of the given size, without allocating it."""
    spec.check_fits(height, width)
    row_starts = range(0, height - spec.patch_h + 1, spec.stride)
    col_starts = range(0, width - spec.patch_w + 1, spec.stride)
    origins = tuple((r, c) for r in row_starts for c in col_starts)
    return PatchGrid(origins, spec.patch_h, spec.patch_w, height, width)


def grid_patches(img: Image, spec: PatchSpec) -> PatchGrid:
    """Deterministic strided grid of patch origins over `img`."""
    return grid_origins(img.height, img.width, spec)


def crop(img: Image, origin: Origin, spec: PatchSpec) -> Image:
    """Exact patch_h×patch_w crop at `origin`."""
    row, col = origin
    if row < 0 or col < 0 or row + spec.patch_h > img.height or col + spec.patch_w > img.width:
        raise ValidationError(f"Crop at {origin} leaves the {img.height}×{img.width} image")
    return Image(img.data[row:row + spec.patch_h, col:col + spec.patch_w])


def random_patch(img: Image, spec: PatchSpec, rng: Rng) -> Tuple[Image, Origin]:
    """Crop at an origin drawn uniformly over all valid top-left positions."""
    spec.check_fits(img.height, img.width)
    origin = rng.position(img.height - spec.patch_h, img.width - spec.patch_w)
    return crop(img, origin, spec), origin


def _channel_mean_subtract(block: np.ndarray) -> np.ndarray:
    return block - block.reshape(-1, block.shape[-1]).mean(axis=0)


def mean_subtract(img: Image, scope: MeanScope = MeanScope.IMAGE,
                  spec: Optional[PatchSpec] = None) -> Image:
    """
    Channel-wise mean subtraction.

    Args:
        img: Input image (8-bit or float)
        scope: IMAGE subtracts the whole-image channel means; PATCH tiles the
            image into non-overlapping patch_h×patch_w blocks (edge blocks
            truncated) and subtracts each block's own channel means
        spec: Patch geometry, required for PATCH scope

    Returns:
        Float image whose channel means are 0 over each scope region
    """
    scope = MeanScope(scope)
    data = img.data.astype(np.float64)
    if scope is MeanScope.NONE:
        return Image(data.astype(np.float32))
    if scope is MeanScope.IMAGE:
        return Image(_channel_mean_subtract(data).astype(np.float32))

    if spec is None:
        raise ValidationError("Per-patch mean subtraction needs a PatchSpec")
    out = np.empty_like(data)
    for row in range(0, img.height, spec.patch_h):
        for col in range(0, img.width, spec.patch_w):
            block = data[row:row + spec.patch_h, col:col + spec.patch_w]
            out[row:row + spec.patch_h, col:col + spec.patch_w] = _channel_mean_subtract(block)
    return Image(out.astype(np.float32))


def downsampled_shape(height: int, width: int, factor: int) -> Tuple[int, int]:
    """⌈H/factor⌉ × ⌈W/factor⌉."""
    if factor < 1:
        raise ValidationError(f"Downsampling factor must be >= 1, got {factor}")
    return -(-height // factor), -(-width // factor)


def _block_sums(data: np.ndarray, factor: int) -> np.ndarray:
    height, width, channels = data.shape
    out_h, out_w = downsampled_shape(height, width, factor)
    padded = np.zeros((out_h * factor, out_w * factor, channels), dtype=data.dtype)
    padded[:height, :width] = data
    return padded.reshape(out_h, factor, out_w, factor, channels).sum(axis=(1, 3))


def downsample(img: Image, factor: int) -> Image:
    """
    Block-mean downsampling; edge blocks average only their valid pixels.

    8-bit input gives rounded 8-bit output (half up), float input gives float.
    """
    downsampled_shape(img.height, img.width, factor)
    if factor == 1:
        return img
    data = img.data.astype(np.float64)
    counts = _block_sums(np.ones(data.shape[:2] + (1,)), factor)
    means = _block_sums(data, factor) / counts
    if img.is_float:
        return Image(means.astype(np.float32))
    return Image(np.floor(means + 0.5).clip(0, 255).astype(np.uint8))


def downsample_mask(mask: LabelMask, factor: int) -> LabelMask:
    """Per-block majority vote; ties go to the smallest class id."""
    downsampled_shape(mask.height, mask.width, factor)
    if factor == 1:
        return mask
    onehot = np.stack([mask.labels == cls for cls in range(NUM_CLASSES)], axis=-1)
    votes = _block_sums(onehot.astype(np.int64), factor)
    return LabelMask(np.argmax(votes, axis=-1))


def upsample_nearest(array: np.ndarray, factor: int, shape: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour upsampling of the last two axes, cropped to `shape`."""
    if factor < 1:
        raise ValidationError(f"Upsampling factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(array, factor, axis=-2), factor, axis=-1)
    height, width = shape
    if out.shape[-2] < height or out.shape[-1] < width:
        raise ValidationError(f"Upsampled map {out.shape[-2:]} smaller than target {shape}")
    return out[..., :height, :width]


def upsample_probmap(pmap: ProbMap, factor: int, shape: Tuple[int, int]) -> ProbMap:
    return ProbMap(upsample_nearest(pmap.values, factor, shape), normalized=pmap.normalized)


def upsample_mask(mask: LabelMask, factor: int, shape: Tuple[int, int]) -> LabelMask:
    return LabelMask(upsample_nearest(mask.labels, factor, shape))


def preprocess(img: Image, scope: MeanScope, spec: Optional[PatchSpec] = None) -> np.ndarray:
    """Mean-subtracted float C×H×W array ready for a network."""
    return mean_subtract(img, scope, spec).to_chw()


def extract_grid(img: Image, spec: PatchSpec,
                 scope: MeanScope = MeanScope.PATCH) -> Tuple[np.ndarray, PatchGrid]:
    """
    All grid patches stacked as an N×C×h×w float32 array.

    With PATCH scope each patch is mean-subtracted on its own; with IMAGE
    scope the whole image is mean-subtracted before cropping.
    """
    grid = grid_patches(img, spec)
    scope = MeanScope(scope)
    source = img if scope is not MeanScope.IMAGE else mean_subtract(img, MeanScope.IMAGE)
    patches = np.empty((len(grid), img.channels, spec.patch_h, spec.patch_w), dtype=np.float32)
    for index, origin in enumerate(grid):
        patch = crop(source, origin, spec)
        if scope is MeanScope.PATCH:
            patch = mean_subtract(patch, MeanScope.IMAGE)
        patches[index] = patch.to_chw()
    return patches, grid


def sample_training_patch(images: Sequence[Image], labels: Sequence[int], spec: PatchSpec,
                          rng: Rng, scope: MeanScope = MeanScope.PATCH) -> Tuple[np.ndarray, int]:
    """
    Pick an image at random, then a uniform random patch from it.

    The patch inherits the image label.
    """
    if not images:
        raise ValidationError("No images to sample from")
    index = int(rng.integers(0, len(images)))
    img = images[index]
    scope = MeanScope(scope)
    if scope is MeanScope.IMAGE:
        img = mean_subtract(img, MeanScope.IMAGE)
    patch, _ = random_patch(img, spec, rng)
    if scope is MeanScope.PATCH:
        patch = mean_subtract(patch, MeanScope.IMAGE)
    return patch.to_chw(), int(labels[index])


def crop_array(array: np.ndarray, origin: Origin, spec: PatchSpec) -> np.ndarray:
    """Crop the last two axes of any array (masks, weight maps) at `origin`."""
    row, col = origin
    return array[..., row:row + spec.patch_h, col:col + spec.patch_w]


__all__: List[str] = [
    "MeanScope",
    "PatchGrid",
    "PatchSpec",
    "TilingConfig",
    "crop",
    "crop_array",
    "downsample",
    "downsample_mask",
    "downsampled_shape",
    "extract_grid",
    "grid_count",
    "grid_origins",
    "grid_patches",
    "mean_subtract",
    "preprocess",
    "random_patch",
    "sample_training_patch",
    "upsample_mask",
    "upsample_nearest",
    "upsample_probmap",
]
