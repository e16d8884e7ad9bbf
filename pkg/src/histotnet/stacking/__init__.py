"""
Stacked image classification: patch-prediction features, boosted trees,
repeated stratified CV and greedy model selection.
"""
from histotnet.stacking.features import PERCENTILES, THRESHOLDS, extract_features, feature_names
from histotnet.stacking.gbt import (
    GbtModel,
    GbtParams,
    gbt_margins,
    gbt_predict,
    gbt_predict_proba,
    gbt_train,
)
from histotnet.stacking.selection import (
    CvPlan,
    CvResult,
    SelectionResult,
    SelectionStep,
    StackConfig,
    cv_score,
    cv_splits,
    exhaustive_select,
    greedy_select,
    join_models,
    split_models,
)
from histotnet.stacking.table import (
    build_feature_table,
    feature_columns,
    model_features,
    read_feature_table,
    select_models,
    stack_predict,
    stack_train,
    table_labels,
    write_feature_table,
)

__all__ = [
    "PERCENTILES",
    "THRESHOLDS",
    "CvPlan",
    "CvResult",
    "GbtModel",
    "GbtParams",
    "SelectionResult",
    "SelectionStep",
    "StackConfig",
    "build_feature_table",
    "cv_score",
    "cv_splits",
    "exhaustive_select",
    "extract_features",
    "feature_columns",
    "feature_names",
    "gbt_margins",
    "gbt_predict",
    "gbt_predict_proba",
    "gbt_train",
    "greedy_select",
    "join_models",
    "model_features",
    "read_feature_table",
    "select_models",
    "split_models",
    "stack_predict",
    "stack_train",
    "table_labels",
    "write_feature_table",
]
