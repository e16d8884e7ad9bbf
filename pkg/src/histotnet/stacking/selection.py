"""
Repeated stratified K-fold scoring and model selection for the stacker.

`cv_score` averages held-out accuracy over `shuffles` independent shuffles
of a stratified `folds`-fold split. `greedy_select` removes models one at a
time, each step dropping the model whose removal gives the best score, and
stops once every removal lowers it. A removal that leaves the score
unchanged is taken, so ties shrink the set the way `exhaustive_select`
prefers smaller subsets.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from sklearn.model_selection import StratifiedKFold

from histotnet.core.rng import Rng
from histotnet.errors import ValidationError
from histotnet.metrics import accuracy
from histotnet.stacking.gbt import GbtParams, gbt_predict, gbt_train
from histotnet.stage_logger import stage_logger

EXHAUSTIVE_LIMIT = 10


class StackConfig(BaseModel):
    """`[stack]` section: CV plan plus boosting hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    folds: int = Field(default=10, ge=2, description="CV folds k")
    shuffles: int = Field(default=20, ge=1, description="CV shuffles s")
    seed: int = Field(default=0, ge=0, description="Shuffle seed")
    rounds: int = Field(default=50, ge=0, description="Boosting rounds per class")
    learning_rate: float = Field(default=0.3, gt=0.0, le=1.0, description="Shrinkage η")
    max_depth: int = Field(default=3, ge=1, description="Maximum tree depth")
    reg_lambda: float = Field(default=1.0, ge=0.0, description="L2 leaf regularization λ")
    gamma: float = Field(default=0.0, ge=0.0, description="Minimum split gain γ")
    min_child_weight: float = Field(default=1e-3, ge=0.0, description="Minimum hessian per child")
    models: Optional[Tuple[str, ...]] = Field(default=None, description="Model subset for stack train")
    exhaustive: bool = Field(default=False, description="Search every subset in stack select")

    def plan(self) -> "CvPlan":
        return CvPlan(self.folds, self.shuffles, self.seed)

    def gbt_params(self) -> GbtParams:
        return GbtParams(
            rounds=self.rounds,
            learning_rate=self.learning_rate,
            max_depth=self.max_depth,
            reg_lambda=self.reg_lambda,
            gamma=self.gamma,
            min_child_weight=self.min_child_weight,
        )


@dataclass(frozen=True)
class CvPlan:
    """folds × shuffles stratified evaluation with a fixed seed."""

    folds: int = 10
    shuffles: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValidationError(f"CV needs at least 2 folds, got {self.folds}")
        if self.shuffles < 1:
            raise ValidationError(f"CV needs at least 1 shuffle, got {self.shuffles}")

    @property
    def evaluations(self) -> int:
        return self.folds * self.shuffles


@dataclass
class CvResult:
    scores: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def sd(self) -> float:
        return float(np.std(self.scores))

    def __str__(self) -> str:
        return f"{self.mean:.4f} ± {self.sd:.4f}"


def cv_splits(labels: Sequence[int], plan: CvPlan) -> Iterator[Tuple[int, int, np.ndarray, np.ndarray]]:
    """
    Yield (shuffle, fold, train indices, test indices) in a fixed order.

    Raises:
        ValidationError: If some class has fewer than `plan.folds` members
    """
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    if counts.min() < plan.folds:
        rare = values[int(np.argmin(counts))]
        raise ValidationError(
            f"Class {rare} has {counts.min()} members, fewer than {plan.folds} folds"
        )
    seeds = Rng(plan.seed).seed_ints(plan.shuffles)
    for shuffle, seed in enumerate(seeds):
        splitter = StratifiedKFold(n_splits=plan.folds, shuffle=True, random_state=seed)
        for fold, (train, test) in enumerate(splitter.split(np.zeros(len(labels)), labels)):
            yield shuffle, fold, train, test


def cv_score(table: pd.DataFrame, labels: Sequence[int], plan: CvPlan,
             params: Optional[GbtParams] = None) -> CvResult:
    """Held-out GBT accuracy over every fold of every shuffle."""
    params = params or GbtParams()
    labels = np.asarray(labels)
    if len(table) != len(labels):
        raise ValidationError(f"{len(table)} rows but {len(labels)} labels")
    scores = []
    for _, _, train, test in cv_splits(labels, plan):
        model = gbt_train(table.iloc[train], labels[train], params)
        scores.append(accuracy(gbt_predict(model, table.iloc[test]), labels[test]))
    return CvResult(scores)


def join_models(features: Mapping[str, pd.DataFrame], names: Sequence[str]) -> pd.DataFrame:
    """Side-by-side feature columns of the named models, prefixed `<model>:`."""
    parts = []
    for name in names:
        frame = features[name]
        parts.append(frame.rename(columns=lambda column, n=name: f"{n}:{column}").reset_index(drop=True))
    return pd.concat(parts, axis=1)


def split_models(table: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Inverse of `join_models` for a table with `<model>:<feature>` columns."""
    groups: Dict[str, List[str]] = {}
    for column in table.columns:
        model, sep, _ = str(column).partition(":")
        if not sep:
            continue
        groups.setdefault(model, []).append(column)
    return {
        model: table[columns].rename(columns=lambda c: str(c).partition(":")[2]).reset_index(drop=True)
        for model, columns in groups.items()
    }


@dataclass
class SelectionStep:
    removed: Optional[str]
    models: List[str]
    score: float


@dataclass
class SelectionResult:
    selected: List[str]
    score: float
    trace: List[SelectionStep] = field(default_factory=list)

    @property
    def scores(self) -> List[float]:
        return [step.score for step in self.trace]


def greedy_select(features: Mapping[str, pd.DataFrame], labels: Sequence[int], plan: CvPlan,
                  params: Optional[GbtParams] = None,
                  models: Optional[Sequence[str]] = None) -> SelectionResult:
    """
    Backward elimination over models.

    Every step re-scores all remaining candidates; ties go to the model
    listed first. Equal-score removals are taken.
    """
    current = list(models) if models is not None else list(features)
    if not current:
        raise ValidationError("greedy_select needs at least one model")
    score = cv_score(join_models(features, current), labels, plan, params).mean
    result = SelectionResult(list(current), score, [SelectionStep(None, list(current), score)])
    stage_logger.log_stage("select.start", {"models": list(current)}, {"score": score})

    while len(current) > 1:
        best_name, best_score = None, -np.inf
        for name in current:
            remaining = [m for m in current if m != name]
            candidate = cv_score(join_models(features, remaining), labels, plan, params).mean
            if candidate > best_score:
                best_name, best_score = name, candidate
        if best_score < score:
            break
        current.remove(best_name)
        score = best_score
        result.trace.append(SelectionStep(best_name, list(current), score))
        stage_logger.log_stage("select.remove", {"model": best_name}, {"score": score, "left": len(current)})

    result.selected, result.score = current, score
    return result


def exhaustive_select(features: Mapping[str, pd.DataFrame], labels: Sequence[int], plan: CvPlan,
                      params: Optional[GbtParams] = None,
                      models: Optional[Sequence[str]] = None) -> SelectionResult:
    """Best non-empty subset by cv_score; smaller subsets win ties."""
    names = list(models) if models is not None else list(features)
    if not names:
        raise ValidationError("exhaustive_select needs at least one model")
    if len(names) > EXHAUSTIVE_LIMIT:
        raise ValidationError(f"Exhaustive search is limited to {EXHAUSTIVE_LIMIT} models, got {len(names)}")
    best: Optional[SelectionResult] = None
    for size in range(1, len(names) + 1):
        for subset in combinations(names, size):
            score = cv_score(join_models(features, subset), labels, plan, params).mean
            if best is None or score > best.score:
                best = SelectionResult(list(subset), score, [SelectionStep(None, list(subset), score)])
    return best
