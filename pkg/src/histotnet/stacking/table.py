"""
Name-keyed feature tables and the stacked image classifier built on them.

A feature table has one row per image: `image_id` first, then one
`<model>:<feature>` column per model feature, then `label` when known.
"""
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from histotnet.errors import FormatError, ValidationError
from histotnet.stacking.features import extract_features
from histotnet.stacking.gbt import GbtModel, GbtParams, gbt_predict_proba, gbt_train
from histotnet.stacking.selection import join_models

IMAGE_ID = "image_id"
LABEL = "label"


def model_features(preds: Sequence[np.ndarray]) -> pd.DataFrame:
    """One feature row per prediction matrix of a single model."""
    if not preds:
        raise ValidationError("No prediction matrices given")
    return pd.DataFrame([extract_features(pred) for pred in preds]).reset_index(drop=True)


def build_feature_table(model_preds: Mapping[str, Sequence[np.ndarray]],
                        image_ids: Sequence[str],
                        labels: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Feature table over several models' predictions.

    Args:
        model_preds: Model name -> one PredMatrix per image, in `image_ids` order
        image_ids: Row identifiers
        labels: Class id per image, or None for unlabelled data

    Raises:
        ValidationError: On count mismatches or a ':' in a model name
    """
    if not model_preds:
        raise ValidationError("build_feature_table needs at least one model")
    for name, preds in model_preds.items():
        if ":" in name:
            raise ValidationError(f"Model name {name!r} must not contain ':'")
        if len(preds) != len(image_ids):
            raise ValidationError(f"Model {name!r} has {len(preds)} predictions for {len(image_ids)} images")
    features = {name: model_features(preds) for name, preds in model_preds.items()}
    table = join_models(features, list(model_preds))
    table.insert(0, IMAGE_ID, [str(i) for i in image_ids])
    if labels is not None:
        if len(labels) != len(image_ids):
            raise ValidationError(f"{len(labels)} labels for {len(image_ids)} images")
        table[LABEL] = np.asarray(labels, dtype=np.int64)
    return table


def feature_columns(table: pd.DataFrame) -> pd.DataFrame:
    """The model feature columns only."""
    return table[[c for c in table.columns if c not in (IMAGE_ID, LABEL)]]


def table_labels(table: pd.DataFrame) -> np.ndarray:
    if LABEL not in table.columns:
        raise ValidationError("Feature table has no label column")
    return table[LABEL].to_numpy(dtype=np.int64)


def write_feature_table(path: Union[str, Path], table: pd.DataFrame) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")


def read_feature_table(path: Union[str, Path]) -> pd.DataFrame:
    try:
        table = pd.read_csv(path, dtype={IMAGE_ID: str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"unreadable feature table ({exc})", offset=0, path=str(path)) from exc
    if table.columns.empty or table.columns[0] != IMAGE_ID:
        raise FormatError(f"first column must be '{IMAGE_ID}'", offset=0, path=str(path))
    if LABEL in table.columns and table.columns[-1] != LABEL:
        raise FormatError(f"'{LABEL}' must be the last column", offset=0, path=str(path))
    return table


def stack_train(table: pd.DataFrame, params: Optional[GbtParams] = None,
                models: Optional[Sequence[str]] = None) -> GbtModel:
    """Fit the stacked classifier, optionally on a subset of models."""
    features = feature_columns(table)
    if models is not None:
        features = select_models(features, models)
    return gbt_train(features, table_labels(table), params)


def stack_predict(model: GbtModel, table: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
    """(class ids, N×C probabilities) for every row of the table."""
    probs = gbt_predict_proba(model, feature_columns(table))
    return np.asarray(model.classes)[np.argmax(probs, axis=1)], probs


def select_models(features: pd.DataFrame, models: Sequence[str]) -> pd.DataFrame:
    prefixes = tuple(f"{m}:" for m in models)
    columns = [c for c in features.columns if str(c).startswith(prefixes)]
    found = {str(c).partition(":")[0] for c in columns}
    missing = [m for m in models if m not in found]
    if missing:
        raise ValidationError(f"Feature table has no columns for models {missing}")
    return features[columns]
