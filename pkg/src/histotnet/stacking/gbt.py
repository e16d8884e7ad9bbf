"""
Second-order gradient-boosted trees for the stacked image classifier.

One-vs-rest logistic boosting: for every class a sequence of depth-limited
regression trees is grown on the gradient g = p − y and hessian h = p(1 − p)
of the logistic loss. Splits are exact (every midpoint between distinct
sorted feature values) and scored with

    gain = ½·(G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)) − γ

Leaves hold −η·G/(H+λ). Margins start at the logit of the class prior, so a
model with zero rounds predicts the priors. Class probabilities are the
sigmoids of the per-class margins renormalized to sum to 1.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, logit

from histotnet.errors import FormatError, ValidationError

Tree = Dict[str, Any]
PRIOR_CLIP = 1e-6


class GbtParams(BaseModel):
    """Boosting hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    rounds: int = Field(default=50, ge=0, description="Boosting rounds per class")
    learning_rate: float = Field(default=0.3, gt=0.0, le=1.0, description="Shrinkage η")
    max_depth: int = Field(default=3, ge=1, description="Maximum tree depth")
    reg_lambda: float = Field(default=1.0, ge=0.0, description="L2 leaf regularization λ")
    gamma: float = Field(default=0.0, ge=0.0, description="Minimum split gain γ")
    min_child_weight: float = Field(default=1e-3, ge=0.0, description="Minimum hessian per child")


@dataclass
class GbtModel:
    """Trained one-vs-rest booster. trees[r][c] is the round-r tree of class c."""

    classes: List[int]
    feature_names: List[str]
    params: GbtParams
    base_margins: List[float]
    trees: List[List[Tree]] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)

    @property
    def tree_count(self) -> int:
        return sum(len(round_trees) for round_trees in self.trees)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classes": self.classes,
            "feature_names": self.feature_names,
            "params": self.params.model_dump(),
            "base_margins": self.base_margins,
            "trees": self.trees,
            "loss_history": self.loss_history,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GbtModel":
        return cls(
            classes=[int(c) for c in data["classes"]],
            feature_names=list(data["feature_names"]),
            params=GbtParams(**data["params"]),
            base_margins=[float(m) for m in data["base_margins"]],
            trees=data["trees"],
            loss_history=[float(v) for v in data.get("loss_history", [])],
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GbtModel":
        text = Path(path).read_text(encoding="utf-8")
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"not a GBT model file ({exc})", offset=0, path=str(path)) from exc


# ============================================================================
# Tree growing
# ============================================================================

def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbtParams):
    """(gain, feature index, threshold) of the best split, or None."""
    G, H = g.sum(), h.sum()
    parent = G * G / (H + params.reg_lambda)
    best = None
    for feature in range(x.shape[1]):
        order = np.argsort(x[:, feature], kind="stable")
        values = x[order, feature]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        gr, hr = G - gl, H - hl
        valid = (values[:-1] < values[1:]) & (hl >= params.min_child_weight) & (hr >= params.min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (gl * gl / (hl + params.reg_lambda) + gr * gr / (hr + params.reg_lambda) - parent)
        gains = np.where(valid, gains - params.gamma, -np.inf)
        position = int(np.argmax(gains))
        if gains[position] > 0 and (best is None or gains[position] > best[0]):
            threshold = 0.5 * (values[position] + values[position + 1])
            best = (float(gains[position]), feature, float(threshold))
    return best


def _grow(x: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbtParams,
          names: Sequence[str], depth: int) -> Tree:
    if depth < params.max_depth and len(g) > 1:
        split = _best_split(x, g, h, params)
        if split is not None:
            _, feature, threshold = split
            left = x[:, feature] < threshold
            return {
                "feature": names[feature],
                "threshold": threshold,
                "left": _grow(x[left], g[left], h[left], params, names, depth + 1),
                "right": _grow(x[~left], g[~left], h[~left], params, names, depth + 1),
            }
    weight = -g.sum() / (h.sum() + params.reg_lambda)
    return {"leaf": float(params.learning_rate * weight)}


def _predict_tree(tree: Tree, frame: Dict[str, np.ndarray], rows: np.ndarray, out: np.ndarray) -> None:
    if "leaf" in tree:
        out[rows] += tree["leaf"]
        return
    left = frame[tree["feature"]][rows] < tree["threshold"]
    _predict_tree(tree["left"], frame, rows[left], out)
    _predict_tree(tree["right"], frame, rows[~left], out)


def _as_frame(table: Union[pd.DataFrame, np.ndarray], names: Optional[Sequence[str]]) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        return table
    array = np.asarray(table, dtype=np.float64)
    if array.ndim != 2:
        raise ValidationError(f"Feature table must be 2-D, got shape {array.shape}")
    names = list(names) if names is not None else [f"f{i}" for i in range(array.shape[1])]
    return pd.DataFrame(array, columns=names)


def _logloss(margins: np.ndarray, targets: np.ndarray) -> float:
    """Mean over rows of the summed per-class logistic losses."""
    return float(np.mean(np.sum(np.logaddexp(0.0, margins) - targets * margins, axis=1)))


def gbt_train(table: Union[pd.DataFrame, np.ndarray], labels: Sequence[int],
              params: Optional[GbtParams] = None,
              feature_names: Optional[Sequence[str]] = None) -> GbtModel:
    """
    Fit a one-vs-rest booster.

    Args:
        table: Rows of features; DataFrame columns are the feature names
        labels: Class id per row
        params: Hyperparameters
        feature_names: Names for ndarray input

    Raises:
        ValidationError: Fewer than two classes, or shape/NaN problems
    """
    params = params or GbtParams()
    frame = _as_frame(table, feature_names)
    x = frame.to_numpy(dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValidationError(f"{x.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(x)):
        raise ValidationError("Feature table contains NaN or Inf")
    classes = sorted(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise ValidationError("GBT training needs at least two classes")

    targets = np.stack([(y == c).astype(np.float64) for c in classes], axis=1)
    priors = np.clip(targets.mean(axis=0), PRIOR_CLIP, 1 - PRIOR_CLIP)
    base = logit(priors)
    margins = np.tile(base, (x.shape[0], 1))
    names = [str(c) for c in frame.columns]
    model = GbtModel(classes, names, params, [float(b) for b in base])
    model.loss_history.append(_logloss(margins, targets))

    columns = {name: x[:, i] for i, name in enumerate(names)}
    every_row = np.arange(x.shape[0])
    for _ in range(params.rounds):
        round_trees = []
        for index in range(len(classes)):
            p = expit(margins[:, index])
            g = p - targets[:, index]
            h = np.maximum(p * (1 - p), 1e-16)
            tree = _grow(x, g, h, params, names, depth=0)
            update = np.zeros(x.shape[0])
            _predict_tree(tree, columns, every_row, update)
            margins[:, index] += update
            round_trees.append(tree)
        model.trees.append(round_trees)
        model.loss_history.append(_logloss(margins, targets))
    return model


def gbt_margins(model: GbtModel, table: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
    frame = _as_frame(table, model.feature_names)
    missing = [name for name in model.feature_names if name not in frame.columns]
    if missing:
        raise ValidationError(f"Feature table lacks {len(missing)} model features, e.g. {missing[:3]}")
    columns = {name: frame[name].to_numpy(dtype=np.float64) for name in model.feature_names}
    rows = np.arange(len(frame))
    margins = np.tile(np.asarray(model.base_margins), (len(frame), 1))
    for round_trees in model.trees:
        for index, tree in enumerate(round_trees):
            update = np.zeros(len(frame))
            _predict_tree(tree, columns, rows, update)
            margins[:, index] += update
    return margins


def gbt_predict_proba(model: GbtModel, table: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
    """N×C probabilities, columns in `model.classes` order, rows summing to 1."""
    probs = expit(gbt_margins(model, table))
    return probs / probs.sum(axis=1, keepdims=True)


def gbt_predict(model: GbtModel, table: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
    """Most probable class id per row."""
    probs = gbt_predict_proba(model, table)
    return np.asarray(model.classes)[np.argmax(probs, axis=1)]
