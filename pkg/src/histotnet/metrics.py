"""
Evaluation metrics: accuracy, Dice and BachScore.

BachScore is implemented exactly as printed:

    1 − Σ|pred − gt| / Σ max(gt, 3 − gt)·[gt > 0 and pred > 0]

The indicator depends on the prediction, so the score is not symmetric in
its arguments and is undefined when no pixel is abnormal in both masks.
Every metric has a double-loop `*_reference` twin for testing.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from histotnet.core.types import CLASS_NAMES, NORMAL, NUM_CLASSES, LabelMask
from histotnet.errors import UndefinedScoreError, ValidationError

ABNORMAL = "abnormal"
ClassSelector = Union[int, str]


def accuracy(preds: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of equal entries."""
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValidationError(f"Shapes differ: {preds.shape} vs {truth.shape}")
    if preds.size == 0:
        raise ValidationError("accuracy of an empty prediction is undefined")
    return float(np.mean(preds == truth))


def _labels(mask: Union[LabelMask, np.ndarray]) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else LabelMask(mask).labels


def _pair(pred, truth):
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise ValidationError(f"Mask shapes differ: {p.shape} vs {t.shape}")
    return p, t


def _is_abnormal(cls: ClassSelector) -> bool:
    return isinstance(cls, str) and cls == ABNORMAL


def _check_class(cls: ClassSelector) -> None:
    if _is_abnormal(cls):
        return
    if not isinstance(cls, (int, np.integer)) or not 0 <= cls < NUM_CLASSES:
        raise ValidationError(f"Class must be 0..{NUM_CLASSES - 1} or '{ABNORMAL}', got {cls!r}")


def _member(labels: np.ndarray, cls: ClassSelector) -> np.ndarray:
    _check_class(cls)
    return labels > NORMAL if _is_abnormal(cls) else labels == cls


def dice(pred, truth, cls: ClassSelector) -> float:
    """2|P∩T| / (|P|+|T|) for one class (or all abnormal classes); 1 when both are empty."""
    p, t = _pair(pred, truth)
    in_p, in_t = _member(p, cls), _member(t, cls)
    total = int(in_p.sum()) + int(in_t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((in_p & in_t).sum()) / total


def bach_score(pred, truth) -> float:
    """
    BachScore of a predicted mask against ground truth.

    Raises:
        UndefinedScoreError: If no pixel has gt > 0 and pred > 0
    """
    p, t = _pair(pred, truth)
    p = p.astype(np.int64)
    t = t.astype(np.int64)
    numerator = np.abs(p - t).sum()
    both = (t > 0) & (p > 0)
    denominator = np.maximum(t, 3 - t)[both].sum()
    if denominator == 0:
        raise UndefinedScoreError("BachScore undefined: no pixel is abnormal in both masks")
    return float(1.0 - numerator / denominator)


def accuracy_reference(preds, truth) -> float:
    correct = 0
    for a, b in zip(list(preds), list(truth)):
        correct += int(a == b)
    return correct / len(preds)


def dice_reference(pred, truth, cls: ClassSelector) -> float:
    p, t = _pair(pred, truth)
    _check_class(cls)
    abnormal = _is_abnormal(cls)
    both = in_p = in_t = 0
    for row in range(p.shape[0]):
        for col in range(p.shape[1]):
            a = p[row, col] > 0 if abnormal else p[row, col] == cls
            b = t[row, col] > 0 if abnormal else t[row, col] == cls
            in_p += int(a)
            in_t += int(b)
            both += int(a and b)
    return 1.0 if in_p + in_t == 0 else 2.0 * both / (in_p + in_t)


def bach_score_reference(pred, truth) -> float:
    p, t = _pair(pred, truth)
    numerator = denominator = 0
    for row in range(p.shape[0]):
        for col in range(p.shape[1]):
            g, q = int(t[row, col]), int(p[row, col])
            numerator += abs(q - g)
            if g > 0 and q > 0:
                denominator += max(g, 3 - g)
    if denominator == 0:
        raise UndefinedScoreError("BachScore undefined: no pixel is abnormal in both masks")
    return 1.0 - numerator / denominator


@dataclass
class SegScore:
    """Table-style segmentation scores of one prediction; bach is None when undefined."""

    bach: Optional[float]
    dice_per_class: List[float] = field(default_factory=list)
    dice_abnormal: float = 0.0

    def to_dict(self) -> Dict[str, Optional[float]]:
        row: Dict[str, Optional[float]] = {"bach": self.bach}
        for cls, value in enumerate(self.dice_per_class):
            row[f"dice_{CLASS_NAMES[cls].lower()}"] = value
        row["dice_abnormal"] = self.dice_abnormal
        return row


def seg_score(pred, truth) -> SegScore:
    try:
        bach: Optional[float] = bach_score(pred, truth)
    except UndefinedScoreError:
        bach = None
    return SegScore(
        bach=bach,
        dice_per_class=[dice(pred, truth, cls) for cls in range(NUM_CLASSES)],
        dice_abnormal=dice(pred, truth, ABNORMAL),
    )


def summarize(rows: Iterable[Dict[str, object]]) -> pd.DataFrame:
    """
    Mean and standard deviation per method.

    Args:
        rows: Dicts with a "method" key plus metric columns (SegScore.to_dict()
            entries); None values are skipped

    Returns:
        DataFrame indexed by method with `<metric>_mean` / `<metric>_sd` columns
        (population sd, 0 for a single row)
    """
    frame = pd.DataFrame(list(rows))
    if frame.empty or "method" not in frame.columns:
        raise ValidationError("summarize needs rows with a 'method' column")
    metrics = [column for column in frame.columns if column not in ("method", "image")]
    frame[metrics] = frame[metrics].apply(pd.to_numeric, errors="coerce")
    grouped = frame.groupby("method", sort=False)[metrics]
    means = grouped.mean().add_suffix("_mean")
    sds = grouped.std(ddof=0).add_suffix("_sd")
    ordered = [name for metric in metrics for name in (f"{metric}_mean", f"{metric}_sd")]
    return pd.concat([means, sds], axis=1)[ordered]


__all__ = [
    "ABNORMAL",
    "SegScore",
    "accuracy",
    "accuracy_reference",
    "bach_score",
    "bach_score_reference",
    "dice",
    "dice_reference",
    "seg_score",
    "summarize",
]
