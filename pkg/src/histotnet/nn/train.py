"""
Training and inference loops for segmentation and patch classification.

Segmentation networks train either on random patch crops of full-size
slides or on whole downsampled slides fed directly. Classifiers train on
random patches that inherit their image label and predict on a strided
grid. Every epoch is recorded in the stage logger with its mean loss and
learning rate. With a fixed seed a run is bit-reproducible on one machine.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.model_selection import StratifiedKFold

from histotnet.core.rng import Rng
from histotnet.core.types import NORMAL, NUM_CLASSES, Image, LabelMask, ProbMap, as_pred_matrix
from histotnet.ensemble import average_predictions, stitch
from histotnet.errors import ValidationError
from histotnet.nn import autograd as ag
from histotnet.nn.autograd import Tensor
from histotnet.nn.boundary import DEFAULT_RAMP, boundary_weights
from histotnet.nn.classifier import PatchClassifier
from histotnet.nn.losses import binary_logloss, softmax_ce, weighted_boundary_logloss
from histotnet.nn.optim import Adam, OptimizerState
from histotnet.nn.tnet import TNet, TNetSpec
from histotnet.stage_logger import stage_logger
from histotnet.tiling import MeanScope, PatchSpec, extract_grid, mean_subtract, sample_training_patch


class SegMode(str, Enum):
    """How slides are presented to a segmentation network."""

    PATCHES = "patches"
    DOWNSAMPLED = "downsampled"


class SegLoss(str, Enum):
    LOGLOSS = "logloss"
    BOUNDARY = "boundary"
    SOFTMAX = "softmax"


class TrainConfig(BaseModel):
    """`[train]` section: segmentation networks."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=150, ge=1, description="Epochs when training on patches")
    downsampled_epochs: int = Field(default=1500, ge=1, description="Epochs on downsampled slides")
    steps_per_epoch: int = Field(default=300, ge=1, description="Batches per epoch (patch mode)")
    batch_size: int = Field(default=40, ge=1, description="Patches per batch")
    patch_size: int = Field(default=300, ge=2, description="Training patch side")
    lr0: float = Field(default=0.01, gt=0.0, description="Initial learning rate")
    halving_period: int = Field(default=20, ge=1, description="Epochs between LR halvings")
    depth: int = Field(default=3, ge=1, description="T-Net levels")
    base_channels: int = Field(default=8, ge=1, description="T-Net top-level channels")
    skip_convs: int = Field(default=1, ge=0, description="Conv blocks per skip connection")
    boundary_ramp: float = Field(default=DEFAULT_RAMP, ge=1.0, description="Boundary weight ramp (px)")
    mode: SegMode = Field(default=SegMode.PATCHES, description="patches | downsampled")
    loss: SegLoss = Field(default=SegLoss.LOGLOSS, description="logloss | boundary | softmax")
    mean_scope: MeanScope = Field(default=MeanScope.IMAGE, description="image | patch | none")
    seed: int = Field(default=0, ge=0, description="Sampling and init seed")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(lr0=self.lr0, halving_period=self.halving_period)

    def tnet_spec(self, out_classes: int = 1, in_channels: int = 3) -> TNetSpec:
        return TNetSpec(self.depth, self.base_channels, self.skip_convs, out_classes, in_channels)


class ClassifierTrainConfig(BaseModel):
    """`[classify]` section: patch classifiers."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=120, ge=1, description="Training epochs")
    steps_per_epoch: int = Field(default=300, ge=1, description="Batches per epoch")
    batch_size: int = Field(default=10, ge=1, description="Patches per batch")
    patch_size: int = Field(default=500, ge=2, description="Training patch side")
    lr0: float = Field(default=0.01, gt=0.0, description="Initial learning rate")
    halving_period: int = Field(default=20, ge=1, description="Epochs between LR halvings")
    widths: Tuple[int, ...] = Field(default=(8, 16), description="Conv stage widths")
    spp_levels: int = Field(default=3, ge=1, le=6, description="Pyramid pooling depth")
    folds: int = Field(default=3, ge=2, description="Cross-validation folds")
    head: Literal["multiclass", "one-vs-all"] = Field(
        default="multiclass", description="Softmax or sigmoid head"
    )
    positive_class: Optional[int] = Field(
        default=None, ge=0, lt=NUM_CLASSES, description="Class a one-vs-all head scores"
    )
    kfold: bool = Field(default=False, description="Train one network per fold")
    mean_scope: MeanScope = Field(default=MeanScope.PATCH, description="image | patch | none")
    seed: int = Field(default=0, ge=0, description="Sampling and init seed")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(lr0=self.lr0, halving_period=self.halving_period)


class PredictConfig(BaseModel):
    """`[predict]` section: inference on one image and stitching of patch scores."""

    model_config = ConfigDict(extra="forbid")

    mode: Literal["classify", "segment"] = Field(
        default="classify", description="classify (PredMatrix) or segment (ProbMap)"
    )
    tiled: bool = Field(default=False, description="Segment grid patches and stitch them")
    downsample: Optional[int] = Field(
        default=None, ge=1, description="Segment a copy downsampled by this factor"
    )
    column: int = Field(default=0, ge=0, description="PredMatrix column to stitch")
    height: Optional[int] = Field(default=None, ge=1, description="Stitched map height")
    width: Optional[int] = Field(default=None, ge=1, description="Stitched map width")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float


@dataclass
class TrainHistory:
    """Per-epoch losses and learning rates of one training run."""

    records: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.records]

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")

    def add(self, epoch: int, loss: float, lr: float) -> None:
        self.records.append(EpochRecord(epoch, loss, lr))


def _run_epochs(stage: str, epochs: int, optimizer: Adam,
                epoch_fn: Callable[[], List[float]], params: dict) -> TrainHistory:
    history = TrainHistory()
    for epoch in range(epochs):
        optimizer.set_epoch(epoch)
        with stage_logger.stage(stage, epoch=epoch, **params) as summary:
            losses = epoch_fn()
            summary["loss"] = float(np.mean(losses))
            summary["lr"] = optimizer.lr
        history.add(epoch, summary["loss"], summary["lr"])
    return history


def _train_step(optimizer: Adam, loss: Tensor) -> float:
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.data)


# ============================================================================
# Segmentation
# ============================================================================

def _pad_to(array: np.ndarray, divisor: int) -> np.ndarray:
    """Zero-pad the last two axes up to multiples of `divisor`."""
    height, width = array.shape[-2:]
    pad_h = -height % divisor
    pad_w = -width % divisor
    if not pad_h and not pad_w:
        return array
    padding = [(0, 0)] * (array.ndim - 2) + [(0, pad_h), (0, pad_w)]
    return np.pad(array, padding)


def _slide_input(img: Image, scope: MeanScope) -> np.ndarray:
    """C×H×W float32 input; PATCH scope is treated as IMAGE for whole slides."""
    scope = MeanScope(scope)
    if scope is MeanScope.PATCH:
        scope = MeanScope.IMAGE
    return mean_subtract(img, scope).to_chw()


def _seg_targets(mask: LabelMask, loss: SegLoss, ramp: float) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if loss is SegLoss.SOFTMAX:
        return mask.labels.astype(np.int64), None
    binary = (mask.labels != NORMAL).astype(np.float64)
    weights = boundary_weights(binary, ramp) if loss is SegLoss.BOUNDARY else None
    return binary, weights


def _seg_loss(model: TNet, x: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray],
              loss: SegLoss) -> Tensor:
    height, width = x.shape[-2:]
    logits = model(Tensor(_pad_to(x, model.spec.divisor)))
    logits = ag.crop_spatial(logits, height, width)
    if loss is SegLoss.SOFTMAX:
        return softmax_ce(logits, target)
    prob = ag.sigmoid(logits)
    target = target[:, None]
    if loss is SegLoss.BOUNDARY:
        return weighted_boundary_logloss(prob, target, weights[:, None])
    return binary_logloss(prob, target)


def _check_seg_model(model: TNet, loss: SegLoss) -> None:
    expected = NUM_CLASSES if loss is SegLoss.SOFTMAX else 1
    if model.spec.out_classes != expected:
        raise ValidationError(
            f"{loss.value} loss needs a network with {expected} output channels, "
            f"got {model.spec.out_classes}"
        )


def train_segmentation(model: TNet, images: Sequence[Image], masks: Sequence[LabelMask],
                       config: TrainConfig, mode: SegMode = SegMode.PATCHES,
                       loss: SegLoss = SegLoss.LOGLOSS, rng: Optional[Rng] = None) -> TrainHistory:
    """
    Train a segmentation network in place.

    Args:
        model: T-Net with 1 output (logloss/boundary: abnormal vs Normal) or 4 (softmax)
        images: Training slides (already downsampled for DOWNSAMPLED mode)
        masks: Ground truth, one per image
        config: Epoch counts, batch and patch sizes, LR schedule
        mode: PATCHES samples random crops; DOWNSAMPLED feeds whole slides
        loss: logloss, boundary (weighted-boundary log loss) or softmax
        rng: Sampling stream; defaults to Rng(config.seed)

    Returns:
        TrainHistory with one record per epoch
    """
    mode, loss = SegMode(mode), SegLoss(loss)
    if not images or len(images) != len(masks):
        raise ValidationError(f"Need matching non-empty images and masks, got {len(images)}/{len(masks)}")
    for img, mask in zip(images, masks):
        if (img.height, img.width) != mask.shape:
            raise ValidationError(f"Image {img.height}×{img.width} does not match mask {mask.shape}")
    _check_seg_model(model, loss)
    rng = rng or Rng(config.seed)
    inputs = [_slide_input(img, config.mean_scope) for img in images]
    targets = [_seg_targets(mask, loss, config.boundary_ramp) for mask in masks]
    optimizer = Adam(model.parameters(), config.optimizer_state())
    params = {"mode": mode.value, "loss": loss.value}

    if mode is SegMode.DOWNSAMPLED:
        def epoch_fn() -> List[float]:
            losses = []
            for index in rng.permutation(len(inputs)):
                target, weights = targets[index]
                batch_weights = None if weights is None else weights[None]
                step_loss = _seg_loss(model, inputs[index][None], target[None], batch_weights, loss)
                losses.append(_train_step(optimizer, step_loss))
            return losses

        return _run_epochs("train-seg.epoch", config.downsampled_epochs, optimizer, epoch_fn, params)

    size = config.patch_size
    if size % model.spec.divisor:
        raise ValidationError(f"patch_size {size} is not divisible by {model.spec.divisor}")
    spec = PatchSpec(size, size)
    for img in images:
        spec.check_fits(img.height, img.width)

    def sample_batch():
        xs, ts, ws = [], [], []
        for _ in range(config.batch_size):
            index = int(rng.integers(0, len(inputs)))
            x = inputs[index]
            row, col = rng.position(x.shape[1] - size, x.shape[2] - size)
            window = (slice(row, row + size), slice(col, col + size))
            patch = x[(slice(None),) + window]
            if MeanScope(config.mean_scope) is MeanScope.PATCH:
                patch = patch - patch.mean(axis=(1, 2), keepdims=True)
            target, weights = targets[index]
            xs.append(patch)
            ts.append(target[window])
            ws.append(None if weights is None else weights[window])
        batch_weights = None if ws[0] is None else np.stack(ws)
        return np.stack(xs), np.stack(ts), batch_weights

    def epoch_fn() -> List[float]:
        losses = []
        for _ in range(config.steps_per_epoch):
            x, target, weights = sample_batch()
            losses.append(_train_step(optimizer, _seg_loss(model, x, target, weights, loss)))
        return losses

    return _run_epochs("train-seg.epoch", config.epochs, optimizer, epoch_fn, params)


def _probabilities(model: TNet, x: np.ndarray) -> np.ndarray:
    """N×K×H×W probabilities for an N×C×H×W batch of any spatial size."""
    height, width = x.shape[-2:]
    logits = model(Tensor(_pad_to(x, model.spec.divisor))).data[:, :, :height, :width]
    if model.spec.out_classes == 1:
        return ag.sigmoid(Tensor(logits)).data
    return ag.softmax(Tensor(logits), axis=1).data


def segment(model: TNet, img: Image, scope: MeanScope = MeanScope.IMAGE) -> ProbMap:
    """
    Whole-image probability map: sigmoid of a single output, softmax otherwise.

    Inputs are zero-padded to the network's divisor and the output cropped back.
    """
    probs = _probabilities(model, _slide_input(img, scope)[None])[0]
    probs = np.clip(probs, 0.0, 1.0)
    return ProbMap(probs, normalized=model.spec.out_classes > 1)


def segment_tiled(model: TNet, img: Image, spec: PatchSpec, scope: MeanScope = MeanScope.PATCH,
                  batch_size: int = 8) -> ProbMap:
    """Segment every grid patch and stitch the patch maps by coverage averaging."""
    if model.spec.out_classes != 1:
        raise ValidationError("Tiled segmentation produces single-channel maps")
    patches, grid = extract_grid(img, spec, scope)
    maps = np.concatenate([
        _probabilities(model, patches[start:start + batch_size])[:, 0]
        for start in range(0, len(patches), batch_size)
    ])
    return stitch(np.clip(maps, 0.0, 1.0), grid, (img.height, img.width))


# ============================================================================
# Classification
# ============================================================================

def _patch_batch(images: Sequence[Image], labels: Sequence[int], spec: PatchSpec, rng: Rng,
                 scope: MeanScope, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    pairs = [sample_training_patch(images, labels, spec, rng, scope) for _ in range(batch_size)]
    return np.stack([patch for patch, _ in pairs]), np.array([label for _, label in pairs])


def train_classifier(model: PatchClassifier, images: Sequence[Image], labels: Sequence[int],
                     config: ClassifierTrainConfig, rng: Optional[Rng] = None,
                     positive_class: Optional[int] = None) -> TrainHistory:
    """
    Train a patch classifier in place on randomly sampled patches.

    Multiclass heads use softmax cross-entropy; one-vs-all heads use binary
    log loss against `label == positive_class`.
    """
    if not images or len(images) != len(labels):
        raise ValidationError(f"Need matching non-empty images and labels, got {len(images)}/{len(labels)}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ValidationError(f"Image labels must lie in 0..{NUM_CLASSES - 1}")
    if model.head == "one-vs-all" and positive_class is None:
        raise ValidationError("A one-vs-all classifier needs positive_class")
    if config.patch_size < model.min_patch:
        raise ValidationError(f"patch_size {config.patch_size} < minimum {model.min_patch} for this network")

    rng = rng or Rng(config.seed)
    spec = PatchSpec(config.patch_size, config.patch_size)
    optimizer = Adam(model.parameters(), config.optimizer_state())

    def epoch_fn() -> List[float]:
        losses = []
        for _ in range(config.steps_per_epoch):
            x, y = _patch_batch(images, labels, spec, rng, config.mean_scope, config.batch_size)
            logits = model(Tensor(x))
            if model.head == "multiclass":
                step_loss = softmax_ce(logits, y)
            else:
                target = (y == positive_class).astype(np.float64)[:, None]
                step_loss = binary_logloss(ag.sigmoid(logits), target)
            losses.append(_train_step(optimizer, step_loss))
        return losses

    return _run_epochs("train-cls.epoch", config.epochs, optimizer, epoch_fn, {"head": model.head})


def predict_patches(model: PatchClassifier, img: Image, spec: PatchSpec,
                    scope: MeanScope = MeanScope.PATCH, batch_size: int = 16) -> np.ndarray:
    """P×K PredMatrix over the strided grid (K = 1 for one-vs-all heads)."""
    patches, _ = extract_grid(img, spec, scope)
    probs = np.concatenate([
        model.predict_proba(patches[start:start + batch_size])
        for start in range(0, len(patches), batch_size)
    ])
    return as_pred_matrix(np.clip(probs, 0.0, 1.0))


@dataclass
class FoldResult:
    """K fold networks plus out-of-fold predictions for every training image."""

    models: List[PatchClassifier]
    fold_of: np.ndarray
    oof_predictions: List[np.ndarray]
    histories: List[TrainHistory]

    def predict(self, img: Image, spec: PatchSpec, scope: MeanScope = MeanScope.PATCH) -> np.ndarray:
        """Average of the fold networks' patch predictions."""
        return average_predictions([predict_patches(m, img, spec, scope) for m in self.models])


def kfold_train(images: Sequence[Image], labels: Sequence[int], builder: Callable[[int], PatchClassifier],
                config: ClassifierTrainConfig, grid: PatchSpec,
                positive_class: Optional[int] = None) -> FoldResult:
    """
    Stratified K-fold training.

    Args:
        builder: Maps a seed to a fresh, untrained network
        grid: Inference grid for the out-of-fold prediction matrices
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels)
    present = counts[counts > 0]
    if present.size < 2 or present.min() < config.folds:
        raise ValidationError(f"Every class needs at least {config.folds} images for {config.folds}-fold CV")
    rng = Rng(config.seed)
    split_seed, *fold_seeds = rng.seed_ints(config.folds + 1)
    splitter = StratifiedKFold(n_splits=config.folds, shuffle=True, random_state=split_seed)

    fold_of = np.full(len(labels), -1, dtype=np.int64)
    models, histories = [], []
    oof: List[Optional[np.ndarray]] = [None] * len(labels)
    for fold, ((train_idx, test_idx), child) in enumerate(
        zip(splitter.split(np.zeros(len(labels)), labels), rng.spawn(config.folds))
    ):
        model = builder(fold_seeds[fold])
        history = train_classifier(model, [images[i] for i in train_idx], labels[train_idx], config,
                                   rng=child, positive_class=positive_class)
        for index in test_idx:
            oof[index] = predict_patches(model, images[index], grid, config.mean_scope)
            fold_of[index] = fold
        models.append(model)
        histories.append(history)
        stage_logger.log_stage("kfold.fold", {"fold": fold}, {"train": len(train_idx), "held_out": len(test_idx),
                                                               "final_loss": history.final_loss})
    return FoldResult(models, fold_of, oof, histories)
