"""
Synthetic slides and microscopy images for desk-scale runs.

Ground-truth regions are grown from smoothed noise fields around random
centres, restricted to their largest 4-connected component and hole-filled,
so every blob is a single simply-connected domain. Pixel colours are smooth
per-class textures plus white noise.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from histotnet.core.rng import Rng
from histotnet.core.types import NUM_CLASSES, Image, LabelMask
from histotnet.errors import ValidationError

DEFAULT_PRIORS = (0.75, 0.01, 0.01, 0.23)

# H&E-like base colours (RGB) and texture strength per class.
_CLASS_COLOURS = np.array(
    [
        [232.0, 190.0, 214.0],  # Normal: pale pink stroma
        [205.0, 140.0, 190.0],  # Benign
        [150.0, 90.0, 170.0],   # InSitu
        [95.0, 55.0, 140.0],    # Invasive: dense purple nuclei
    ]
)
_CLASS_TEXTURE = np.array([6.0, 14.0, 20.0, 28.0])
_CLASS_GRAIN = np.array([6.0, 3.0, 2.0, 1.2])

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SynthSpec:
    """
    Parameters of a synthetic slide.

    Attributes:
        height, width: Slide size in pixels
        priors: Target fraction of pixels per class (Normal, Benign, InSitu, Invasive)
        blob_count: Inclusive (min, max) number of blobs per abnormal class
        noise_level: Std of additive white noise as a fraction of 255
    """

    height: int = 512
    width: int = 512
    priors: Tuple[float, float, float, float] = DEFAULT_PRIORS
    blob_count: Tuple[int, int] = (1, 3)
    noise_level: float = 0.05

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValidationError(f"Zero-area synthetic spec {self.height}×{self.width}")
        if len(self.priors) != NUM_CLASSES:
            raise ValidationError(f"Expected {NUM_CLASSES} class priors, got {len(self.priors)}")
        if min(self.priors) < 0 or abs(sum(self.priors) - 1.0) > 1e-9:
            raise ValidationError(f"Class priors must be non-negative and sum to 1: {self.priors}")
        low, high = self.blob_count
        if low < 1 or high < low:
            raise ValidationError(f"Invalid blob count range {self.blob_count}")
        if self.noise_level < 0:
            raise ValidationError("noise_level must be non-negative")


class SynthConfig(BaseModel):
    """`[synth]` section of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    height: int = Field(default=512, ge=1, description="Slide height in pixels")
    width: int = Field(default=512, ge=1, description="Slide width in pixels")
    priors: Tuple[float, float, float, float] = Field(
        default=DEFAULT_PRIORS, description="Class priors: Normal, Benign, InSitu, Invasive"
    )
    blob_min: int = Field(default=1, ge=1, description="Minimum blobs per abnormal class")
    blob_max: int = Field(default=3, ge=1, description="Maximum blobs per abnormal class")
    noise_level: float = Field(default=0.05, ge=0.0, le=1.0, description="White noise std / 255")
    count: int = Field(default=4, ge=1, description="Number of slides to generate")
    dataset: bool = Field(default=False, description="Write a labelled classification set instead")
    per_class: int = Field(default=4, ge=1, description="Images per class in a classification set")
    seed: int = Field(default=7, ge=0, description="Generator seed")

    def to_spec(self) -> SynthSpec:
        return SynthSpec(
            height=self.height,
            width=self.width,
            priors=tuple(self.priors),
            blob_count=(self.blob_min, self.blob_max),
            noise_level=self.noise_level,
        )


def smooth_noise(shape: Tuple[int, int], sigma: float, rng: Rng) -> np.ndarray:
    """Gaussian-smoothed white noise rescaled to zero mean, unit std."""
    field = ndimage.gaussian_filter(rng.normal(size=shape), sigma=max(sigma, 0.5), mode="reflect")
    std = field.std()
    return (field - field.mean()) / std if std > 0 else field


def _grow_blob(remaining: np.ndarray, area: int, rng: Rng) -> np.ndarray:
    """One simply-connected region of roughly `area` pixels inside `remaining`."""
    height, width = remaining.shape
    free = np.flatnonzero(remaining)
    if free.size == 0 or area < 1:
        return np.zeros_like(remaining)
    centre = free[int(rng.integers(0, free.size))]
    cy, cx = divmod(int(centre), width)

    radius = max(np.sqrt(area / np.pi), 1.0)
    rows, cols = np.mgrid[0:height, 0:width]
    field = np.hypot(rows - cy, cols - cx) / radius
    field = field + 0.35 * smooth_noise((height, width), sigma=min(radius / 2.0, 24.0), rng=rng)

    candidates = field[remaining]
    k = min(area, candidates.size) - 1
    cut = np.partition(candidates, k)[k]
    region = (field <= cut) & remaining

    labels, count = ndimage.label(region, structure=_FOUR_CONNECTED)
    if count == 0:
        return region
    sizes = ndimage.sum_labels(region, labels, index=np.arange(1, count + 1))
    region = labels == (int(np.argmax(sizes)) + 1)
    return ndimage.binary_fill_holes(region) & remaining


def synth_mask(spec: SynthSpec, rng: Rng) -> LabelMask:
    """Label mask with class frequencies close to spec.priors."""
    shape = (spec.height, spec.width)
    labels = np.zeros(shape, dtype=np.uint8)
    remaining = np.ones(shape, dtype=bool)
    total = spec.height * spec.width

    # Largest abnormal class first so rare classes are not crowded out.
    order = sorted(range(1, NUM_CLASSES), key=lambda c: -spec.priors[c])
    for cls in order:
        target = int(round(spec.priors[cls] * total))
        if target < 1:
            continue
        low, high = spec.blob_count
        blobs = int(rng.integers(low, high + 1))
        sizes = np.full(blobs, target // blobs)
        sizes[: target % blobs] += 1
        for size in sizes:
            region = _grow_blob(remaining, int(size), rng)
            labels[region] = cls
            remaining &= ~region
    return LabelMask(labels)


def render_tissue(mask: np.ndarray, noise_level: float, rng: Rng) -> Image:
    """RGB rendering of a label array: per-class colour, smooth texture, white noise."""
    labels = np.asarray(mask, dtype=np.intp)
    shape = labels.shape
    image = _CLASS_COLOURS[labels].copy()
    for cls in range(NUM_CLASSES):
        where = labels == cls
        if not where.any():
            continue
        texture = smooth_noise(shape, sigma=_CLASS_GRAIN[cls], rng=rng)
        image[where] += _CLASS_TEXTURE[cls] * texture[where][:, None]
    image += rng.normal(0.0, noise_level * 255.0, size=image.shape)
    return Image(np.clip(np.rint(image), 0, 255).astype(np.uint8))


def synth_slide(spec: SynthSpec, rng: Rng) -> Tuple[Image, LabelMask]:
    """
    Generate a synthetic slide and its ground-truth mask.

    Same spec and same seed give identical outputs.
    """
    mask = synth_mask(spec, rng)
    image = render_tissue(mask.labels, spec.noise_level, rng)
    return image, mask


def synth_microscopy(label: int, height: int, width: int, rng: Rng,
                     noise_level: float = 0.05) -> Image:
    """
    Synthetic microscopy image carrying one global class label.

    Class `label` covers most of the tissue, the rest is Normal.
    """
    if label < 0 or label >= NUM_CLASSES:
        raise ValidationError(f"Class label must be in 0..{NUM_CLASSES - 1}, got {label}")
    priors = [0.0] * NUM_CLASSES
    if label == 0:
        priors[0] = 1.0
    else:
        priors[label] = 0.6
        priors[0] = 0.4
    spec = SynthSpec(height=height, width=width, priors=tuple(priors), blob_count=(1, 2),
                     noise_level=noise_level)
    mask = synth_mask(spec, rng)
    return render_tissue(mask.labels, noise_level, rng)


def synth_dataset(n_per_class: int, height: int, width: int,
                  seed: int = 0) -> Tuple[List[Image], np.ndarray]:
    """Balanced, shuffled classification dataset (labels evenly distributed)."""
    if n_per_class < 1:
        raise ValidationError("n_per_class must be at least 1")
    rng = Rng(seed)
    labels = np.repeat(np.arange(NUM_CLASSES), n_per_class)
    labels = labels[rng.permutation(labels.size)]
    images = [synth_microscopy(int(label), height, width, rng) for label in labels]
    return images, labels
