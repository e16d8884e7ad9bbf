"""
Image-level features from patch predictions.

For a P×K prediction matrix the features are, in this order:

    c{k}_min, c{k}_max, c{k}_mean          for every class k   (3K)
    c{k}_argmax                            for every class k   (K, multiclass only)
    c{k}_p10, c{k}_p25, c{k}_p75, c{k}_p90 for every class k   (4K)
    c{k}_gt015, c{k}_gt025                 for every class k   (2K)

giving 40 features for a 4-class network and 9 for a one-vs-all network.
Percentiles use linear interpolation; threshold counts use strict ">".
"""
from typing import List

import numpy as np
import pandas as pd

from histotnet.core.types import as_pred_matrix

PERCENTILES = (10, 25, 75, 90)
THRESHOLDS = (0.15, 0.25)


def _threshold_tag(value: float) -> str:
    return f"gt{int(round(value * 100)):03d}"


def feature_names(classes: int) -> List[str]:
    """Feature names in extraction order for a K-column matrix."""
    names = [f"c{k}_{stat}" for k in range(classes) for stat in ("min", "max", "mean")]
    if classes > 1:
        names += [f"c{k}_argmax" for k in range(classes)]
    names += [f"c{k}_p{q}" for k in range(classes) for q in PERCENTILES]
    names += [f"c{k}_{_threshold_tag(t)}" for k in range(classes) for t in THRESHOLDS]
    return names


def extract_features(pred: np.ndarray) -> pd.Series:
    """
    Feature vector of one image's prediction matrix.

    Args:
        pred: P×K PredMatrix (a 1-D array is one column)

    Returns:
        Float Series indexed by `feature_names(K)`
    """
    matrix = as_pred_matrix(pred)
    patches, classes = matrix.shape
    values: List[float] = []
    for k in range(classes):
        column = matrix[:, k]
        values += [column.min(), column.max(), column.mean()]
    if classes > 1:
        values += list(np.bincount(matrix.argmax(axis=1), minlength=classes).astype(np.float64))
    for k in range(classes):
        values += list(np.percentile(matrix[:, k], PERCENTILES, method="linear"))
    for k in range(classes):
        values += [float((matrix[:, k] > t).sum()) for t in THRESHOLDS]
    return pd.Series(np.asarray(values, dtype=np.float64), index=feature_names(classes))
