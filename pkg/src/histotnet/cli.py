"""
Command-line interface for histotnet.

Built with Typer and Rich. Every pipeline stage is one subcommand that reads
and writes the documented file formats:

- PNG images and label masks (raw class ids)
- PMAP probability maps
- PredMatrix CSV (`class_0..class_{K-1}`)
- NNW model bundles, GBT JSON models
- feature-table and report CSVs

Exit codes: 0 on success, 2 on validation errors (bad inputs, config or
flags), 1 on anything else.
"""

import sys
import traceback
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
import typer
from dotenv import load_dotenv
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.theme import Theme

from histotnet import __version__
from histotnet.config import RunConfig, RuntimeSettings, load_config
from histotnet.core.io import (
    read_image,
    read_mask,
    read_pred_matrix,
    read_probmap,
    write_image,
    write_mask,
    write_pred_matrix,
    write_probmap,
)
from histotnet.core.rng import Rng
from histotnet.core.synth import synth_dataset, synth_slide
from histotnet.core.types import Image
from histotnet.ensemble import average_predictions, blend_binary, compose_multiclass, shifted_blend, stitch
from histotnet.errors import ValidationError
from histotnet.metrics import seg_score
from histotnet.nn.bundle import load_network, save_model
from histotnet.nn.classifier import PatchClassifier, build_classifier
from histotnet.nn.gradcheck import gradcheck as run_gradcheck
from histotnet.nn.tnet import TNet, TNetSpec, UNet, build_tnet
from histotnet.nn.train import (
    SegLoss,
    SegMode,
    kfold_train,
    predict_patches,
    segment,
    segment_tiled,
    train_classifier,
    train_segmentation,
)
from histotnet.pipeline import classify_demo, demo_config, pipeline_demo
from histotnet.postprocess import postprocess_stages
from histotnet.render import overlay
from histotnet.stacking.gbt import GbtModel
from histotnet.stacking.selection import CvPlan, exhaustive_select, greedy_select, split_models
from histotnet.stacking.table import (
    build_feature_table,
    feature_columns,
    read_feature_table,
    stack_predict,
    stack_train,
    table_labels,
    write_feature_table,
)
from histotnet.stage_logger import stage_logger
from histotnet.tiling import (
    downsample,
    downsample_mask,
    grid_origins,
    upsample_probmap,
)

# ============================================================================
# Application Setup
# ============================================================================

load_dotenv()

EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
MASK_SUFFIX = "_mask"
LABELS_FILE = "labels.csv"

custom_theme = Theme({
    "info": "cyan",
    "warning": "yellow",
    "error": "bold red",
    "success": "bold green",
    "stage": "bold magenta",
    "metric": "bold yellow",
    "banner": "bold bright_cyan",
    "dim": "dim white",
    "box_border": "bright_cyan",
})

console = Console(theme=custom_theme)

app = typer.Typer(
    name="histotnet",
    help="Patch-based T-Net segmentation, postprocessing and stacking ensembles for histology",
    add_completion=False,
    rich_markup_mode="rich",
)
stack_app = typer.Typer(help="Stacked image classifier: train, select models, predict")
app.add_typer(stack_app, name="stack")


# ============================================================================
# Utility Functions
# ============================================================================

def print_error(message: str, title: str = "Error"):
    """Print a formatted error message."""
    console.print(Panel(
        f"[error]{message}[/error]",
        title=title,
        border_style="error"
    ))


def print_success(message: str, title: str = "Success"):
    """Print a formatted success message."""
    console.print(Panel(
        f"[success]{message}[/success]",
        title=title,
        border_style="success"
    ))


def print_info(message: str, title: str = "Info"):
    """Print a formatted info message."""
    console.print(Panel(
        f"[info]{message}[/info]",
        title=title,
        border_style="info"
    ))


@contextmanager
def command_errors(verbose: bool = False) -> Iterator[None]:
    """Map exceptions to the exit-code contract."""
    try:
        yield
    except typer.Exit:
        raise
    except (ValidationError, FileNotFoundError) as e:
        print_error(str(e), "Validation Error")
        raise typer.Exit(EXIT_VALIDATION)
    except Exception as e:
        print_error(f"An unexpected error occurred: {str(e)}", "Runtime Error")
        if verbose or RuntimeSettings().verbose:
            console.print("\n[error]Full traceback:[/error]")
            console.print(traceback.format_exc())
        raise typer.Exit(EXIT_INTERNAL)


def effective_config(config_path: Optional[Path], toy: bool, verbose: bool = False) -> RunConfig:
    """Load the config file, apply --toy, and log the result verbatim."""
    settings = RuntimeSettings()
    stage_logger.echo = verbose or settings.verbose
    config = load_config(config_path)
    if toy or settings.toy:
        config = config.scaled_for_toy()
    return config


def log_config(config: RunConfig) -> None:
    stage_logger.log_config(config.to_text())


def parse_ints(text: Optional[str], flag: str) -> Optional[Tuple[int, ...]]:
    if text is None:
        return None
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated integers, got {text!r}")


def slide_pairs(directory: Path) -> List[Tuple[str, Path, Path]]:
    """(name, image path, mask path) for every `<name>_mask.png` with a `<name>.png`."""
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    pairs = []
    for mask_path in sorted(directory.glob(f"*{MASK_SUFFIX}.png")):
        name = mask_path.stem[: -len(MASK_SUFFIX)]
        image_path = directory / f"{name}.png"
        if not image_path.exists():
            raise ValidationError(f"Mask {mask_path.name} has no matching image {image_path.name}")
        pairs.append((name, image_path, mask_path))
    if not pairs:
        raise ValidationError(f"No '<name>{MASK_SUFFIX}.png' masks found in {directory}")
    return pairs


def labelled_images(directory: Path) -> Tuple[List[str], List[Image], np.ndarray]:
    """Images listed in `<directory>/labels.csv` (columns image,label)."""
    labels_path = directory / LABELS_FILE
    if not labels_path.exists():
        raise ValidationError(f"{labels_path} not found")
    frame = pd.read_csv(labels_path, dtype={"image": str})
    if list(frame.columns) != ["image", "label"]:
        raise ValidationError(f"{labels_path} must have columns image,label")
    images = [read_image(directory / f"{name}.png") for name in frame["image"]]
    return list(frame["image"]), images, frame["label"].to_numpy(dtype=np.int64)


def metrics_table(title: str, values: Dict[str, Optional[float]]) -> Table:
    table = Table(title=title, box=box.ROUNDED, header_style="bold cyan")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="metric", justify="right")
    for name, value in values.items():
        table.add_row(name, "undefined" if value is None else f"{value:.4f}")
    return table


# ============================================================================
# Data commands
# ============================================================================

@app.command("synth")
def synth(
    out: Path = typer.Option(..., "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Generator seed"),
    count: Optional[int] = typer.Option(None, "--count", "-n", help="Number of slides"),
    height: Optional[int] = typer.Option(None, "--height", help="Slide height"),
    width: Optional[int] = typer.Option(None, "--width", help="Slide width"),
    dataset: bool = typer.Option(False, "--dataset", help="Write a labelled classification set instead"),
    per_class: Optional[int] = typer.Option(None, "--per-class", help="Images per class with --dataset"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Scale sizes down for quick runs"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Generate synthetic slides with ground-truth masks.

    Examples:

        histotnet synth --seed 7 --out data/

        histotnet synth --dataset --per-class 6 --out micro/
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose)
        config = config.with_overrides("synth", seed=seed, count=count, height=height, width=width,
                                       dataset=dataset or None, per_class=per_class)
        log_config(config)
        cfg = config.synth
        out.mkdir(parents=True, exist_ok=True)
        if cfg.dataset:
            images, labels = synth_dataset(cfg.per_class, cfg.height, cfg.width, seed=cfg.seed)
            names = [f"image_{i:03d}" for i in range(len(images))]
            for name, img in zip(names, images):
                write_image(out / f"{name}.png", img)
            pd.DataFrame({"image": names, "label": labels}).to_csv(out / LABELS_FILE, index=False)
            print_success(f"Wrote {len(images)} labelled images to {out}", "Synthetic Dataset")
            return
        for index, child in enumerate(Rng(cfg.seed).spawn(cfg.count)):
            img, mask = synth_slide(cfg.to_spec(), child)
            write_image(out / f"slide_{index}.png", img)
            write_mask(out / f"slide_{index}{MASK_SUFFIX}.png", mask)
        print_success(f"Wrote {cfg.count} slides to {out}", "Synthetic Slides")


@app.command("preprocess")
def preprocess(
    data: Path = typer.Option(..., "--data", "-d", help="Directory of slides and masks"),
    out: Path = typer.Option(..., "--out", "-o", help="Output directory"),
    factor: Optional[int] = typer.Option(None, "--factor", "-f", help="Downsampling factor"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Scale sizes down for quick runs"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Downsample every slide (block mean) and mask (majority vote).
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose).with_overrides(
            "tiling", downsample_factor=factor
        )
        log_config(config)
        factor = config.tiling.downsample_factor
        pairs = slide_pairs(data)
        for name, image_path, mask_path in pairs:
            write_image(out / f"{name}.png", downsample(read_image(image_path), factor))
            write_mask(out / f"{name}{MASK_SUFFIX}.png", downsample_mask(read_mask(mask_path), factor))
        print_success(f"Downsampled {len(pairs)} slides by {factor} into {out}", "Preprocess")


# ============================================================================
# Training commands
# ============================================================================

@app.command("train-seg")
def train_seg(
    data: Path = typer.Option(..., "--data", "-d", help="Directory of slides and masks"),
    out: Path = typer.Option(..., "--out", "-o", help="Output model file (NNW)"),
    mode: Optional[SegMode] = typer.Option(None, "--mode", help="patches or downsampled"),
    loss: Optional[SegLoss] = typer.Option(None, "--loss", help="logloss, boundary or softmax"),
    epochs: Optional[int] = typer.Option(None, "--epochs", "-e", help="Training epochs"),
    patch: Optional[int] = typer.Option(None, "--patch", help="Training patch side"),
    batch: Optional[int] = typer.Option(None, "--batch", help="Patches per batch"),
    depth: Optional[int] = typer.Option(None, "--depth", help="T-Net levels"),
    base: Optional[int] = typer.Option(None, "--base", help="Top-level channels"),
    skip_convs: Optional[int] = typer.Option(None, "--skip-convs", help="Conv blocks per skip"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Init and sampling seed"),
    log_path: Optional[Path] = typer.Option(None, "--log", help="Export stage records as JSON"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Scale epochs and sizes down"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Train a T-Net segmentation network.

    Examples:

        histotnet train-seg --data data/ --out tnet1.nnw --loss logloss

        histotnet train-seg --data data/ --out tnet3.nnw --mode downsampled --loss softmax
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose).with_overrides("train", mode=mode, loss=loss)
        mode, loss = config.train.mode, config.train.loss
        epoch_key = "downsampled_epochs" if mode is SegMode.DOWNSAMPLED else "epochs"
        config = config.with_overrides(
            "train", **{epoch_key: epochs}, patch_size=patch, batch_size=batch, depth=depth,
            base_channels=base, skip_convs=skip_convs, seed=seed,
        )
        log_config(config)
        cfg = config.train
        images, masks = [], []
        for _, image_path, mask_path in slide_pairs(data):
            images.append(read_image(image_path))
            masks.append(read_mask(mask_path))
        if mode is SegMode.DOWNSAMPLED:
            factor = config.tiling.downsample_factor
            images = [downsample(img, factor) for img in images]
            masks = [downsample_mask(mask, factor) for mask in masks]

        out_classes = 4 if loss is SegLoss.SOFTMAX else 1
        model = build_tnet(cfg.tnet_spec(out_classes=out_classes), seed=cfg.seed)
        history = train_segmentation(model, images, masks, cfg, mode, loss)
        save_model(out, model)
        if log_path is not None:
            stage_logger.export_to_json(str(log_path))
        print_success(
            f"Trained {model.descriptor()} for {len(history.records)} epochs\n"
            f"Final loss: {history.final_loss:.5f}\nSaved to {out}",
            "Segmentation Training",
        )


@app.command("train-cls")
def train_cls(
    data: Path = typer.Option(..., "--data", "-d", help=f"Directory with images and {LABELS_FILE}"),
    out: Path = typer.Option(..., "--out", "-o", help="Model file, or a directory with --kfold"),
    head: Optional[str] = typer.Option(None, "--head", help="multiclass or one-vs-all"),
    positive_class: Optional[int] = typer.Option(None, "--positive-class", help="Class for one-vs-all"),
    widths: Optional[str] = typer.Option(None, "--widths", help="Conv stage widths, e.g. 8,16"),
    spp_levels: Optional[int] = typer.Option(None, "--spp", help="Pyramid pooling depth"),
    epochs: Optional[int] = typer.Option(None, "--epochs", "-e", help="Training epochs"),
    patch: Optional[int] = typer.Option(None, "--patch", help="Training patch side"),
    kfold: bool = typer.Option(False, "--kfold", help="Train one network per fold"),
    folds: Optional[int] = typer.Option(None, "--folds", help="Number of folds with --kfold"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Init and sampling seed"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Scale epochs and sizes down"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Train a patch classifier on randomly sampled image patches.

    With --kfold the output directory receives fold_<k>.nnw networks and
    out-of-fold prediction matrices under oof/<image>.csv.
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose).with_overrides(
            "classify", widths=parse_ints(widths, "--widths"), spp_levels=spp_levels,
            epochs=epochs, patch_size=patch, folds=folds, seed=seed, head=head,
            positive_class=positive_class, kfold=kfold or None,
        )
        log_config(config)
        cfg = config.classify
        names, images, labels = labelled_images(data)
        out_classes = 1 if cfg.head == "one-vs-all" else 4

        def builder(model_seed: int) -> PatchClassifier:
            return build_classifier(3, cfg.widths, cfg.spp_levels, out_classes, cfg.head, seed=model_seed)

        if not cfg.kfold:
            model = builder(cfg.seed)
            history = train_classifier(model, images, labels, cfg, positive_class=cfg.positive_class)
            save_model(out, model)
            print_success(f"Final loss {history.final_loss:.5f}, saved to {out}", "Classifier Training")
            return

        result = kfold_train(images, labels, builder, cfg, config.tiling.patch_spec(), cfg.positive_class)
        for fold, model in enumerate(result.models):
            save_model(out / f"fold_{fold}.nnw", model)
        for name, matrix in zip(names, result.oof_predictions):
            write_pred_matrix(out / "oof" / f"{name}.csv", matrix)
        print_success(f"Trained {len(result.models)} fold networks into {out}", "Classifier Training")


# ============================================================================
# Inference and postprocessing commands
# ============================================================================

@app.command("predict")
def predict(
    model_paths: List[Path] = typer.Option(..., "--model", "-m", help="Model file(s); fold models are averaged"),
    image_path: Path = typer.Option(..., "--image", "-i", help="Input image"),
    out: Path = typer.Option(..., "--out", "-o", help="PredMatrix CSV or PMAP file"),
    mode: Optional[str] = typer.Option(None, "--mode", help="classify (PredMatrix) or segment (PMAP)"),
    patch: Optional[int] = typer.Option(None, "--patch", help="Grid patch side"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Grid stride"),
    tiled: bool = typer.Option(False, "--tiled", help="Segment grid patches and stitch them"),
    factor: Optional[int] = typer.Option(None, "--downsample", help="Segment a downsampled copy"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Scale sizes down"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Run a trained network on one image.

    Examples:

        histotnet predict -m cls.nnw -i slide.png -o pred.csv --patch 500 --stride 100

        histotnet predict -m tnet2.nnw -i slide.png -o map.pmap --mode segment --downsample 40
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose).with_overrides(
            "tiling", patch_size=patch, stride=stride
        ).with_overrides("predict", mode=mode, tiled=tiled or None, downsample=factor)
        log_config(config)
        cfg = config.predict
        img = read_image(image_path)
        networks = [load_network(path) for path in model_paths]
        spec = config.tiling.patch_spec()

        if cfg.mode == "classify":
            if not all(isinstance(n, PatchClassifier) for n in networks):
                raise ValidationError("--mode classify needs classifier models")
            scope = config.classify.mean_scope
            matrix = average_predictions([predict_patches(n, img, spec, scope) for n in networks])
            write_pred_matrix(out, matrix)
            print_success(f"PredMatrix {matrix.shape[0]}×{matrix.shape[1]} written to {out}", "Predict")
            return

        if len(networks) != 1 or not isinstance(networks[0], (TNet, UNet)):
            raise ValidationError("--mode segment needs exactly one T-Net model")
        network = networks[0]
        scope = config.train.mean_scope
        if cfg.tiled:
            pmap = segment_tiled(network, img, spec, scope)
        elif cfg.downsample and cfg.downsample > 1:
            small = segment(network, downsample(img, cfg.downsample), scope)
            pmap = upsample_probmap(small, cfg.downsample, (img.height, img.width))
        else:
            pmap = segment(network, img, scope)
        write_probmap(out, pmap)
        print_success(f"ProbMap {pmap.classes}×{pmap.height}×{pmap.width} written to {out}", "Predict")


@app.command("stitch")
def stitch_cmd(
    pred: Path = typer.Option(..., "--pred", "-p", help="PredMatrix CSV"),
    out: Path = typer.Option(..., "--out", "-o", help="Output PMAP"),
    image_path: Optional[Path] = typer.Option(None, "--image", "-i", help="Image giving the output size"),
    height: Optional[int] = typer.Option(None, "--height", help="Output height"),
    width: Optional[int] = typer.Option(None, "--width", help="Output width"),
    column: Optional[int] = typer.Option(None, "--column", help="PredMatrix column to stitch"),
    patch: Optional[int] = typer.Option(None, "--patch", help="Grid patch side"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Grid stride"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Rebuild a slide-level map from per-patch scores by coverage averaging.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides(
            "tiling", patch_size=patch, stride=stride
        ).with_overrides("predict", column=column, height=height, width=width)
        log_config(config)
        height, width, column = config.predict.height, config.predict.width, config.predict.column
        if image_path is not None:
            img = read_image(image_path)
            height, width = img.height, img.width
        if height is None or width is None:
            raise ValidationError("Give --image or both --height and --width")
        matrix = read_pred_matrix(pred)
        if not 0 <= column < matrix.shape[1]:
            raise ValidationError(f"--column {column} out of range for {matrix.shape[1]} columns")
        grid = grid_origins(height, width, config.tiling.patch_spec())
        write_probmap(out, stitch(matrix[:, column], grid, (height, width)))
        print_success(f"Stitched {len(grid)} patch scores into {height}×{width} map {out}", "Stitch")


@app.command("postprocess")
def postprocess_cmd(
    map_path: Path = typer.Option(..., "--map", help="Single-channel PMAP"),
    out: Path = typer.Option(..., "--out", "-o", help="Output binary mask PNG"),
    blur_kernel: Optional[int] = typer.Option(None, "--blur-kernel", help="Odd Gaussian kernel side"),
    blur_sigma: Optional[float] = typer.Option(None, "--blur-sigma", help="Gaussian sigma"),
    threshold: Optional[float] = typer.Option(None, "--threshold", "-t", help="Foreground threshold"),
    closing_size: Optional[int] = typer.Option(None, "--closing", help="Odd closing element side"),
    area_exponent: Optional[float] = typer.Option(None, "--area-exponent", help="Power-mean exponent"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Blur, threshold, close and area-filter a probability map.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose)
        overrides = dict(threshold=threshold, closing_size=closing_size, area_exponent=area_exponent)
        if blur_kernel is not None:
            # sigma follows the kernel unless given explicitly
            overrides.update(blur_kernel=blur_kernel, blur_sigma=blur_sigma or blur_kernel / 6.0)
        elif blur_sigma is not None:
            overrides["blur_sigma"] = blur_sigma
        config = config.with_overrides("postprocess", **overrides)
        log_config(config)
        stages = postprocess_stages(read_probmap(map_path), config.postprocess)
        write_mask(out, stages.result)
        limit = "none" if stages.area_limit is None else f"{stages.area_limit:.2f}"
        print_success(
            f"{len(stages.components)} components, {len(stages.kept)} kept "
            f"(area limit {limit})\nMask written to {out}",
            "Postprocess",
        )


@app.command("blend")
def blend_cmd(
    map_a: Path = typer.Option(..., "--a", help="First PMAP"),
    map_b: Path = typer.Option(..., "--b", help="Second PMAP"),
    out: Path = typer.Option(..., "--out", "-o", help="Output PMAP"),
    weight: Optional[float] = typer.Option(None, "--weight", "-w", help="Weight of the first map"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Pixelwise weighted average of two binary probability maps.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides("blend", weight=weight)
        log_config(config)
        write_probmap(out, blend_binary(read_probmap(map_a), read_probmap(map_b), config.blend.weight))
        print_success(f"Blended map written to {out}", "Blend")


@app.command("compose")
def compose_cmd(
    binary: Path = typer.Option(..., "--binary", "-b", help="Binary mask PNG"),
    out: Path = typer.Option(..., "--out", "-o", help="Output label mask PNG"),
    tnet3: Optional[Path] = typer.Option(None, "--tnet3", help="Multiclass mask PNG"),
    shifted: bool = typer.Option(False, "--shifted", help="Map 0/1 to Benign/Invasive instead"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Turn a binary mask into labels, composed with a multiclass mask or shifted.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides(
            "blend", shifted=shifted or None
        )
        log_config(config)
        mask = read_mask(binary)
        if config.blend.shifted:
            result = shifted_blend(mask)
        elif tnet3 is None:
            raise ValidationError("Give --tnet3 or --shifted")
        else:
            result = compose_multiclass(mask, read_mask(tnet3))
        write_mask(out, result)
        print_success(f"Label mask written to {out}", "Compose")


# ============================================================================
# Stacking commands
# ============================================================================

def _parse_model_dirs(specs: List[str]) -> Dict[str, Path]:
    models: Dict[str, Path] = {}
    for spec in specs:
        name, sep, directory = spec.partition("=")
        if not sep or not name or not directory:
            raise ValidationError(f"--model expects NAME=DIR, got {spec!r}")
        if name in models:
            raise ValidationError(f"Model {name!r} given twice")
        models[name] = Path(directory)
    return models


@app.command("features")
def features(
    models: List[str] = typer.Option(..., "--model", "-m", help="NAME=DIR of <image>.csv PredMatrices"),
    out: Path = typer.Option(..., "--out", "-o", help="Output feature table CSV"),
    labels_path: Optional[Path] = typer.Option(None, "--labels", "-l", help="CSV with image,label"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Build a name-keyed feature table from several models' prediction matrices.
    """
    with command_errors(verbose):
        log_config(effective_config(config_path, False, verbose))
        model_dirs = _parse_model_dirs(models)
        first = next(iter(model_dirs.values()))
        image_ids = sorted(path.stem for path in first.glob("*.csv"))
        if not image_ids:
            raise ValidationError(f"No PredMatrix CSV files in {first}")
        preds = {
            name: [read_pred_matrix(directory / f"{image}.csv") for image in image_ids]
            for name, directory in model_dirs.items()
        }
        labels = None
        if labels_path is not None:
            frame = pd.read_csv(labels_path, dtype={"image": str}).set_index("image")
            missing = [image for image in image_ids if image not in frame.index]
            if missing:
                raise ValidationError(f"{labels_path} lacks labels for {missing[:3]}")
            labels = frame.loc[image_ids, "label"].to_numpy(dtype=np.int64)
        table = build_feature_table(preds, image_ids, labels)
        write_feature_table(out, table)
        print_success(f"{len(image_ids)} rows × {table.shape[1] - 1 - (labels is not None)} features "
                      f"written to {out}", "Features")


@stack_app.command("train")
def stack_train_cmd(
    table_path: Path = typer.Option(..., "--table", "-t", help="Labelled feature table"),
    out: Path = typer.Option(..., "--out", "-o", help="Output GBT model (JSON)"),
    models: Optional[str] = typer.Option(None, "--models", help="Comma-separated model subset"),
    rounds: Optional[int] = typer.Option(None, "--rounds", help="Boosting rounds"),
    learning_rate: Optional[float] = typer.Option(None, "--eta", help="Learning rate"),
    max_depth: Optional[int] = typer.Option(None, "--max-depth", help="Tree depth"),
    reg_lambda: Optional[float] = typer.Option(None, "--lambda", help="L2 leaf regularization"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Train the stacked boosted-tree classifier.
    """
    with command_errors(verbose):
        subset = tuple(m.strip() for m in models.split(",") if m.strip()) if models else None
        config = effective_config(config_path, False, verbose).with_overrides(
            "stack", rounds=rounds, learning_rate=learning_rate, max_depth=max_depth,
            reg_lambda=reg_lambda, models=subset,
        )
        log_config(config)
        subset = list(config.stack.models) if config.stack.models else None
        model = stack_train(read_feature_table(table_path), config.stack.gbt_params(), subset)
        model.save(out)
        print_success(f"{model.tree_count} trees, final training loss {model.loss_history[-1]:.5f}\n"
                      f"Saved to {out}", "Stack Train")


@stack_app.command("select")
def stack_select_cmd(
    table_path: Path = typer.Option(..., "--table", "-t", help="Labelled feature table"),
    folds: Optional[int] = typer.Option(None, "--folds", "-k", help="CV folds"),
    shuffles: Optional[int] = typer.Option(None, "--shuffles", help="CV shuffles"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Shuffle seed"),
    exhaustive: bool = typer.Option(False, "--exhaustive", help="Search every subset instead"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Write the selection trace CSV"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Greedy backward model selection scored by repeated stratified CV.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides(
            "stack", folds=folds, shuffles=shuffles, seed=seed, exhaustive=exhaustive or None
        )
        log_config(config)
        table = read_feature_table(table_path)
        per_model = split_models(feature_columns(table))
        plan: CvPlan = config.stack.plan()
        select = exhaustive_select if config.stack.exhaustive else greedy_select
        result = select(per_model, table_labels(table), plan, config.stack.gbt_params())

        trace = Table(title="Model selection", box=box.ROUNDED, header_style="bold cyan")
        trace.add_column("Step", justify="right")
        trace.add_column("Removed", style="warning")
        trace.add_column("Models", style="cyan")
        trace.add_column("CV accuracy", style="metric", justify="right")
        rows = []
        for index, step in enumerate(result.trace):
            trace.add_row(str(index), step.removed or "-", ", ".join(step.models), f"{step.score:.4f}")
            rows.append({"step": index, "removed": step.removed or "", "models": "|".join(step.models),
                         "score": step.score})
        console.print(trace)
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(rows).to_csv(out, index=False, float_format="%.6f")
        print_success(f"Selected {', '.join(result.selected)} with CV accuracy {result.score:.4f} "
                      f"({plan.evaluations} fold evaluations per score)", "Stack Select")


@stack_app.command("predict")
def stack_predict_cmd(
    model_path: Path = typer.Option(..., "--model", "-m", help="GBT model (JSON)"),
    table_path: Path = typer.Option(..., "--table", "-t", help="Feature table"),
    out: Path = typer.Option(..., "--out", "-o", help="Output predictions CSV"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Predict image classes with a trained stacked classifier.
    """
    with command_errors(verbose):
        log_config(effective_config(config_path, False, verbose))
        model = GbtModel.load(model_path)
        table = read_feature_table(table_path)
        classes, probs = stack_predict(model, table)
        frame = pd.DataFrame({"image_id": table["image_id"], "prediction": classes})
        for index, cls in enumerate(model.classes):
            frame[f"prob_{cls}"] = probs[:, index]
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, float_format="%.6f")
        message = f"{len(frame)} predictions written to {out}"
        if "label" in table.columns:
            accuracy = float(np.mean(classes == table_labels(table)))
            message += f"\nAccuracy against table labels: {accuracy:.4f}"
        print_success(message, "Stack Predict")


# ============================================================================
# Evaluation, diagnostics and rendering
# ============================================================================

@app.command("eval")
def eval_cmd(
    pred: Path = typer.Option(..., "--pred", "-p", help="Predicted label mask PNG"),
    gt: Path = typer.Option(..., "--gt", "-g", help="Ground-truth label mask PNG"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV report with rows image,metric,value"),
    image_id: Optional[str] = typer.Option(None, "--id", help="Image id in the report (default: pred stem)"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    BachScore and Dice scores of a predicted mask.
    """
    with command_errors(verbose):
        log_config(effective_config(config_path, False, verbose))
        score = seg_score(read_mask(pred), read_mask(gt)).to_dict()
        console.print(metrics_table(f"Scores for {pred.name}", score))
        if out is not None:
            name = image_id or pred.stem
            rows = [{"image": name, "metric": metric, "value": value} for metric, value in score.items()]
            out.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(rows).to_csv(out, index=False, float_format="%.6f")


@app.command("gradcheck")
def gradcheck_cmd(
    arch: Optional[str] = typer.Option(None, "--arch", "-a", help="tnet, unet or classifier"),
    depth: Optional[int] = typer.Option(None, "--depth", help="T-Net levels"),
    base: Optional[int] = typer.Option(None, "--base", help="Top-level channels"),
    skip_convs: Optional[int] = typer.Option(None, "--skip-convs", help="Conv blocks per skip"),
    out_classes: Optional[int] = typer.Option(None, "--out-classes", help="Output channels"),
    size: Optional[int] = typer.Option(None, "--size", help="Input side"),
    tolerance: Optional[float] = typer.Option(None, "--tolerance", help="Maximum relative error"),
    step: Optional[float] = typer.Option(None, "--step", help="Finite-difference step"),
    max_entries: Optional[int] = typer.Option(None, "--max-entries", help="Entries sampled per tensor"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Weights, input and sampling seed"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Central finite-difference check of a small network's gradients.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides(
            "gradcheck", arch=arch, depth=depth, base_channels=base, skip_convs=skip_convs,
            out_classes=out_classes, size=size, tolerance=tolerance, step=step,
            max_entries=max_entries, seed=seed,
        )
        log_config(config)
        cfg = config.gradcheck
        if cfg.arch == "classifier":
            classes = cfg.out_classes if cfg.out_classes > 1 else 4
            model = build_classifier(3, (2, 3), 2, classes, seed=cfg.seed)
        else:
            spec = TNetSpec(cfg.depth, cfg.base_channels, cfg.skip_convs if cfg.arch == "tnet" else 0,
                            cfg.out_classes)
            model = build_tnet(spec, seed=cfg.seed) if cfg.arch == "tnet" else UNet(spec, Rng(cfg.seed))
        inputs = Rng(cfg.seed).normal(size=(1, 3, cfg.size, cfg.size))
        report = run_gradcheck(model, inputs, tolerance=cfg.tolerance, step=cfg.step,
                               max_entries=cfg.max_entries, seed=cfg.seed)
        console.print(report.to_table())
        if not report.passed:
            print_error(f"Gradient check failed for {', '.join(report.failures())}", "Gradcheck")
            raise typer.Exit(EXIT_INTERNAL)
        print_success(f"Max relative error {report.max_error:.3e} over {report.checked_entries} entries "
                      f"({report.skipped_entries} skipped at kinks)", "Gradcheck")


@app.command("render")
def render(
    image_path: Path = typer.Option(..., "--image", "-i", help="Slide PNG"),
    mask_path: Path = typer.Option(..., "--mask", "-m", help="Label mask PNG"),
    out: Path = typer.Option(..., "--out", "-o", help="Output overlay PNG"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Colour weight"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Overlay a label mask: red Benign, green InSitu, blue Invasive.
    """
    with command_errors(verbose):
        config = effective_config(config_path, False, verbose).with_overrides("render", alpha=alpha)
        log_config(config)
        write_image(out, overlay(read_image(image_path), read_mask(mask_path), config.render.alpha))
        print_success(f"Overlay written to {out}", "Render")


# ============================================================================
# Walkthroughs and housekeeping
# ============================================================================

@app.command("demo")
def demo(
    out: Path = typer.Option(Path("runs/demo"), "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help="Synthetic data seed"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: demo settings)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Synthetic end-to-end run: three T-Nets, blending, postprocessing, composition
    and shifted blending, scored with BachScore and Dice.
    """
    with command_errors(verbose):
        stage_logger.echo = verbose or RuntimeSettings().verbose
        config = load_config(config_path) if config_path else demo_config()
        config = config.with_overrides("synth", seed=seed)
        log_config(config)
        print_info(f"Training demo networks, writing to {out}", "Demo")
        report = pipeline_demo(config, out)

        table = Table(title="Segmentation results", box=box.ROUNDED, header_style="bold cyan")
        table.add_column("Method", style="stage")
        columns = [c for c in report.summary.columns if c.endswith("_mean")]
        for column in columns:
            table.add_column(column[: -len("_mean")], justify="right")
        for method, row in report.summary.iterrows():
            table.add_row(method, *("-" if pd.isna(row[c]) else f"{row[c]:.4f}" for c in columns))
        console.print(table)
        comparison = report.comparison()
        if comparison["leader"] == "undefined":
            print_info("BachScore is undefined for shifted blending or composition", "Shifted vs compose")
        else:
            relation = ">=" if comparison["leader"] == "shifted" else "<"
            print_info(
                f"shifted {comparison['shifted_bach']:.4f} {relation} compose {comparison['compose_bach']:.4f} "
                f"(margin {comparison['margin']:+.4f}); written to comparison.csv",
                "Shifted vs compose",
            )
        stage_logger.export_to_json(str(out / "stages.json"))
        print_success(f"Reports written to {out}", "Demo")


@app.command("demo-classify")
def demo_classify(
    out: Path = typer.Option(Path("runs/demo-classify"), "--out", "-o", help="Output directory"),
    per_class: Optional[int] = typer.Option(None, "--per-class", help="Images per class"),
    size: Optional[int] = typer.Option(None, "--size", help="Image side"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: demo settings)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Synthetic classification run: fold classifiers, features, greedy selection
    and stacked accuracy.
    """
    with command_errors(verbose):
        stage_logger.echo = verbose or RuntimeSettings().verbose
        config = load_config(config_path) if config_path else demo_config()
        config = config.with_overrides("synth", per_class=per_class, height=size, width=size)
        log_config(config)
        report = classify_demo(config, out)
        print_success(f"Selected models: {', '.join(report.selected)}\n"
                      f"Stacked CV accuracy: {report.accuracy:.4f}\nReports written to {out}",
                      "Classification Demo")


@app.command("config")
def show_config(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file"),
    toy: bool = typer.Option(False, "--toy", help="Show the toy-scaled config"),
    write: Optional[Path] = typer.Option(None, "--write", "-w", help="Write the effective config"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Print the effective configuration in config-file format.
    """
    with command_errors(verbose):
        config = effective_config(config_path, toy, verbose)
        log_config(config)
        text = config.to_text()
        if write is not None:
            write.parent.mkdir(parents=True, exist_ok=True)
            write.write_text(text, encoding="utf-8")
        if not stage_logger.echo:
            console.print(text, markup=False, highlight=False)


@app.command()
def version():
    """
    Display version information about histotnet and its stack.
    """
    version_info = Table(title="HistoTNet - Version Info", box=box.DOUBLE)
    version_info.add_column("Component", style="cyan", width=20)
    version_info.add_column("Version/Info", style="yellow")

    version_info.add_row("histotnet", __version__)
    version_info.add_row("Python", f"{sys.version.split()[0]}")
    for package in ("numpy", "scipy", "pandas", "scikit-learn", "Pillow", "pydantic", "typer", "rich"):
        try:
            version_info.add_row(package, metadata.version(package))
        except metadata.PackageNotFoundError:
            version_info.add_row(package, "Not installed")

    console.print(version_info)
    console.print()


# ============================================================================
# Main Entry Point
# ============================================================================

def main():
    """Main entry point for the CLI application."""
    try:
        app()
    except KeyboardInterrupt:
        console.print("\n\n[warning]Interrupted by user[/warning]\n")
        sys.exit(0)


if __name__ == "__main__":
    main()
