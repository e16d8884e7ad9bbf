"""
End-to-end walkthroughs on synthetic data.

`pipeline_demo` trains three small T-Nets and scores the ensembling paths:

- T-Net 1: binary, random full-resolution patches, log loss, tiled inference
- T-Net 2: binary, whole downsampled slides, weighted-boundary log loss
- T-Net 3: four classes, whole downsampled slides, softmax cross-entropy

T-Net 1 and 2 maps are blended and postprocessed into a binary mask, which is
then turned into labels either by composing it with T-Net 3 or by shifted
blending. Per-image scores, a per-method summary and the shifted-versus-
compose BachScore comparison are written as CSV.

`classify_demo` runs the image classification path: fold-trained patch
classifiers, prediction features, greedy model selection and the stacked
boosted-tree accuracy.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from histotnet.config import RunConfig
from histotnet.core.io import write_mask
from histotnet.core.rng import Rng
from histotnet.core.synth import synth_dataset, synth_slide
from histotnet.core.types import Image, LabelMask
from histotnet.ensemble import binary_from_blend, compose_multiclass, shifted_blend
from histotnet.errors import ValidationError
from histotnet.metrics import seg_score, summarize
from histotnet.nn.classifier import PatchClassifier, build_classifier
from histotnet.nn.tnet import build_tnet
from histotnet.nn.train import SegLoss, SegMode, kfold_train, segment, segment_tiled, train_segmentation
from histotnet.stacking.selection import greedy_select, split_models
from histotnet.stacking.table import build_feature_table, feature_columns, write_feature_table
from histotnet.stage_logger import stage_logger
from histotnet.tiling import downsample, downsample_mask, upsample_mask, upsample_probmap

METHODS = ("tnet3", "compose", "shifted")
CSV_FLOAT = "%.6f"
OVA_CLASS = 3


def demo_config() -> RunConfig:
    """Settings small enough for the demos to finish in minutes on a laptop."""
    config = RunConfig()
    config = config.with_overrides("synth", height=96, width=96, count=3, per_class=6, seed=7)
    config = config.with_overrides(
        "train", epochs=3, downsampled_epochs=30, steps_per_epoch=4, batch_size=4,
        patch_size=32, depth=2, base_channels=4, skip_convs=1, boundary_ramp=4.0,
    )
    config = config.with_overrides(
        "classify", epochs=2, steps_per_epoch=3, batch_size=4, patch_size=32,
        widths=(4, 8), spp_levels=2, folds=3,
    )
    config = config.with_overrides("tiling", patch_size=32, stride=16, downsample_factor=4)
    config = config.with_overrides("postprocess", blur_kernel=5, closing_size=3)
    return config.with_overrides("stack", folds=3, shuffles=2, rounds=10, max_depth=2)


@dataclass
class DemoReport:
    """Per-image scores, the per-method summary and the written files."""

    rows: List[Dict[str, object]]
    summary: pd.DataFrame
    files: List[Path] = field(default_factory=list)

    def score(self, method: str, metric: str = "bach") -> float:
        return float(self.summary.loc[method, f"{metric}_mean"])

    def comparison(self) -> Dict[str, object]:
        """
        Mean BachScore of shifted blending against composition.

        `leader` is "shifted" when shifted blending scores at least as high,
        "compose" otherwise and "undefined" when either mean is missing.
        """
        shifted, composed = self.score("shifted"), self.score("compose")
        if np.isnan(shifted) or np.isnan(composed):
            leader = "undefined"
        else:
            leader = "shifted" if shifted >= composed else "compose"
        return {
            "shifted_bach": shifted,
            "compose_bach": composed,
            "margin": shifted - composed,
            "leader": leader,
        }


def pipeline_demo(config: Optional[RunConfig] = None,
                  out_dir: Union[str, Path, None] = None) -> DemoReport:
    """
    Train the three segmentation networks and score the ensembling paths.

    Args:
        config: Run configuration; defaults to `demo_config()`
        out_dir: Where to write scores.csv, summary.csv and predicted masks

    Returns:
        DemoReport; identical inputs give byte-identical CSV files
    """
    config = config or demo_config()
    train_cfg, tiling = config.train, config.tiling
    factor = tiling.downsample_factor
    rng = Rng(config.synth.seed)
    with stage_logger.stage("demo.synth", count=config.synth.count) as summary:
        slides = [synth_slide(config.synth.to_spec(), child) for child in rng.spawn(config.synth.count)]
        summary["slides"] = len(slides)
    n_train = max(1, len(slides) - 1)
    train_slides = slides[:n_train]
    test_slides = slides[n_train:] or slides

    small_images = [downsample(img, factor) for img, _ in train_slides]
    small_masks = [downsample_mask(mask, factor) for _, mask in train_slides]
    streams = Rng(train_cfg.seed).spawn(3)

    tnet1 = build_tnet(train_cfg.tnet_spec(out_classes=1), seed=train_cfg.seed)
    with stage_logger.stage("demo.tnet1") as summary:
        history = train_segmentation(tnet1, [img for img, _ in train_slides], [m for _, m in train_slides],
                                     train_cfg, SegMode.PATCHES, SegLoss.LOGLOSS, streams[0])
        summary["final_loss"] = history.final_loss

    tnet2 = build_tnet(train_cfg.tnet_spec(out_classes=1), seed=train_cfg.seed + 1)
    with stage_logger.stage("demo.tnet2") as summary:
        history = train_segmentation(tnet2, small_images, small_masks, train_cfg,
                                     SegMode.DOWNSAMPLED, SegLoss.BOUNDARY, streams[1])
        summary["final_loss"] = history.final_loss

    tnet3 = build_tnet(train_cfg.tnet_spec(out_classes=4), seed=train_cfg.seed + 2)
    with stage_logger.stage("demo.tnet3") as summary:
        history = train_segmentation(tnet3, small_images, small_masks, train_cfg,
                                     SegMode.DOWNSAMPLED, SegLoss.SOFTMAX, streams[2])
        summary["final_loss"] = history.final_loss

    out = Path(out_dir) if out_dir is not None else None
    rows: List[Dict[str, object]] = []
    files: List[Path] = []
    for index, (img, truth) in enumerate(test_slides):
        predictions = _predict_slide(tnet1, tnet2, tnet3, img, config)
        for method in METHODS:
            row: Dict[str, object] = {"method": method, "image": f"slide_{index}"}
            row.update(seg_score(predictions[method], truth).to_dict())
            rows.append(row)
            if out is not None:
                path = out / f"slide_{index}_{method}.png"
                write_mask(path, predictions[method])
                files.append(path)

    report = DemoReport(rows, summarize(rows), files)
    comparison = report.comparison()
    stage_logger.log_stage("demo.compare", {"methods": ["shifted", "compose"]}, comparison)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        scores_path, summary_path = out / "scores.csv", out / "summary.csv"
        comparison_path = out / "comparison.csv"
        pd.DataFrame(rows).to_csv(scores_path, index=False, float_format=CSV_FLOAT)
        report.summary.to_csv(summary_path, float_format=CSV_FLOAT)
        pd.DataFrame([comparison]).to_csv(comparison_path, index=False, float_format=CSV_FLOAT)
        report.files += [scores_path, summary_path, comparison_path]
    return report


def _predict_slide(tnet1, tnet2, tnet3, img: Image, config: RunConfig) -> Dict[str, LabelMask]:
    factor = config.tiling.downsample_factor
    scope = config.train.mean_scope
    shape = (img.height, img.width)
    small = downsample(img, factor)

    map1 = segment_tiled(tnet1, img, config.tiling.patch_spec(), scope)
    map2 = upsample_probmap(segment(tnet2, small, scope), factor, shape)
    labels3 = upsample_mask(segment(tnet3, small, scope).argmax(), factor, shape)

    binary = binary_from_blend(map1, map2, config.blend.weight, config.postprocess)
    return {
        "tnet3": labels3,
        "compose": compose_multiclass(binary, labels3),
        "shifted": shifted_blend(binary),
    }


# ============================================================================
# Classification walkthrough
# ============================================================================

@dataclass
class ClassifyReport:
    """Feature table, selection trace and stacked CV accuracy."""

    table: pd.DataFrame
    selected: List[str]
    trace: List[Dict[str, object]]
    accuracy: float
    files: List[Path] = field(default_factory=list)


def _demo_models(config: RunConfig) -> Dict[str, dict]:
    classify = config.classify
    return {
        "spp_deep": {"widths": classify.widths, "spp_levels": classify.spp_levels},
        "spp_shallow": {"widths": classify.widths[:1], "spp_levels": classify.spp_levels},
        "ova_invasive": {"widths": classify.widths, "spp_levels": 1, "out_classes": 1,
                         "head": "one-vs-all"},
    }


def classify_demo(config: Optional[RunConfig] = None, out_dir: Union[str, Path, None] = None,
                  n_per_class: Optional[int] = None, image_size: Optional[int] = None) -> ClassifyReport:
    """
    Fold-train patch classifiers on a synthetic microscopy set, stack their
    prediction features and select models greedily.

    Image count and size default to `synth.per_class` and `synth.height` × `synth.width`.
    """
    config = config or demo_config()
    n_per_class = n_per_class or config.synth.per_class
    height, width = (image_size, image_size) if image_size else (config.synth.height, config.synth.width)
    needed = max(config.classify.folds, config.stack.folds)
    if n_per_class < needed:
        raise ValidationError(f"n_per_class must be at least {needed} for the configured folds")
    images, labels = synth_dataset(n_per_class, height, width, seed=config.synth.seed)
    grid = config.tiling.patch_spec()

    preds: Dict[str, List[np.ndarray]] = {}
    for offset, (name, params) in enumerate(_demo_models(config).items()):
        def builder(seed: int, params=params) -> PatchClassifier:
            return build_classifier(seed=seed, **params)

        positive = OVA_CLASS if params.get("head") == "one-vs-all" else None
        fold_config = config.classify.model_copy(update={"seed": config.classify.seed + offset})
        with stage_logger.stage("demo.classifier", model=name) as summary:
            result = kfold_train(images, labels, builder, fold_config, grid, positive_class=positive)
            summary["final_losses"] = [h.final_loss for h in result.histories]
        preds[name] = result.oof_predictions

    ids = [f"image_{i:03d}" for i in range(len(images))]
    table = build_feature_table(preds, ids, labels)
    selection = greedy_select(split_models(feature_columns(table)), labels,
                              config.stack.plan(), config.stack.gbt_params(), models=list(preds))
    trace = [{"step": i, "removed": step.removed or "", "models": "|".join(step.models), "score": step.score}
             for i, step in enumerate(selection.trace)]

    files: List[Path] = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_feature_table(out / "features.csv", table)
        pd.DataFrame(trace).to_csv(out / "selection.csv", index=False, float_format=CSV_FLOAT)
        files = [out / "features.csv", out / "selection.csv"]
    return ClassifyReport(table, selection.selected, trace, selection.score, files)


__all__ = [
    "METHODS",
    "ClassifyReport",
    "DemoReport",
    "classify_demo",
    "demo_config",
    "pipeline_demo",
]
