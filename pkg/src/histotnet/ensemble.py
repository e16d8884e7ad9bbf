"""
Ensembling: binary map blending, binary→multiclass composition, fold-model
averaging and stitching patch scores back to slide maps.

    compose_multiclass:  result = 3·binary + tnet3·(1 − binary)
    shifted_blend:       result = 1 + 2·binary
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from histotnet.core.types import BENIGN, INVASIVE, LabelMask, ProbMap, as_pred_matrix, require_binary
from histotnet.errors import ValidationError
from histotnet.postprocess import PostprocessConfig, postprocess_chain


class BlendConfig(BaseModel):
    """`[blend]` section."""

    model_config = ConfigDict(extra="forbid")

    weight: float = Field(default=0.5, ge=0.0, le=1.0, description="Weight of the first map")
    shifted: bool = Field(default=False, description="compose maps 0/1 to Benign/Invasive instead")


def blend_binary(map_a: ProbMap, map_b: ProbMap, weight: float = 0.5) -> ProbMap:
    """Pixelwise weight·A + (1 − weight)·B of two single-channel maps."""
    if not 0.0 <= weight <= 1.0:
        raise ValidationError(f"Blend weight must lie in [0, 1], got {weight}")
    if map_a.classes != 1 or map_b.classes != 1:
        raise ValidationError("blend_binary expects single-channel maps")
    if map_a.shape != map_b.shape:
        raise ValidationError(f"Map shapes differ: {map_a.shape} vs {map_b.shape}")
    a = map_a.values.astype(np.float64)
    b = map_b.values.astype(np.float64)
    return ProbMap(np.clip(weight * a + (1.0 - weight) * b, 0.0, 1.0))


def compose_multiclass(binary: LabelMask, tnet3: LabelMask) -> LabelMask:
    """Invasive (3) wherever the binary mask fires, the multiclass prediction elsewhere."""
    require_binary(binary, "binary mask")
    if binary.shape != tnet3.shape:
        raise ValidationError(f"Mask shapes differ: {binary.shape} vs {tnet3.shape}")
    b = binary.labels.astype(np.int64)
    return LabelMask(INVASIVE * b + tnet3.labels.astype(np.int64) * (1 - b))


def shifted_blend(binary: LabelMask) -> LabelMask:
    """Negative pixels become Benign (1), positive ones Invasive (3)."""
    require_binary(binary, "binary mask")
    return LabelMask(BENIGN + 2 * binary.labels.astype(np.int64))


def average_predictions(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of equally shaped PredMatrices."""
    if not matrices:
        raise ValidationError("No prediction matrices to average")
    checked = [as_pred_matrix(m) for m in matrices]
    shape = checked[0].shape
    for matrix in checked[1:]:
        if matrix.shape != shape:
            raise ValidationError(f"PredMatrix shapes differ: {shape} vs {matrix.shape}")
    return as_pred_matrix(np.clip(np.mean(np.stack(checked), axis=0), 0.0, 1.0))


def stitch(scores: np.ndarray, grid, shape: Optional[Tuple[int, int]] = None) -> ProbMap:
    """
    Rebuild a slide-level map from per-patch scores.

    Args:
        scores: One score per patch (P, or P×1) or one map per patch (P×h×w)
        grid: PatchGrid the scores were produced on
        shape: Output H×W; defaults to the grid's image size

    Returns:
        Single-channel ProbMap; each pixel is the mean over the patches covering
        it, uncovered pixels are 0
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2 and scores.shape[1] == 1:
        scores = scores[:, 0]
    if scores.shape[0] != len(grid):
        raise ValidationError(f"{scores.shape[0]} scores for a grid of {len(grid)} patches")
    height, width = shape if shape is not None else (grid.height, grid.width)
    ph, pw = grid.patch_h, grid.patch_w
    if scores.ndim == 3 and scores.shape[1:] != (ph, pw):
        raise ValidationError(f"Patch maps are {scores.shape[1:]}, grid patches are {ph}×{pw}")
    if scores.ndim not in (1, 3):
        raise ValidationError(f"scores must be P, P×1 or P×h×w, got {scores.shape}")

    total = np.zeros((height, width))
    coverage = np.zeros((height, width))
    for (row, col), value in zip(grid, scores):
        if row + ph > height or col + pw > width:
            raise ValidationError(f"Patch at {(row, col)} leaves the {height}×{width} output")
        total[row:row + ph, col:col + pw] += value
        coverage[row:row + ph, col:col + pw] += 1
    out = np.divide(total, coverage, out=np.zeros_like(total), where=coverage > 0)
    return ProbMap(np.clip(out, 0.0, 1.0))


def binary_from_blend(map_a: ProbMap, map_b: ProbMap, weight: float = 0.5,
                      config: Optional[PostprocessConfig] = None) -> LabelMask:
    """Blend two binary maps, then postprocess the result into a BinaryMask."""
    return postprocess_chain(blend_binary(map_a, map_b, weight), config)


__all__ = [
    "BlendConfig",
    "average_predictions",
    "binary_from_blend",
    "blend_binary",
    "compose_multiclass",
    "shifted_blend",
    "stitch",
]
