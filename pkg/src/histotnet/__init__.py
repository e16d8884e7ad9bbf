"""
HistoTNet - T-Net segmentation and stacking ensembles for histology images

A desk-scale digital-pathology toolkit featuring:
- Whole-slide tiling, downsampling and mean subtraction
- A numpy reverse-mode engine with T-Net (U-Net plus skip convolutions)
  and an SPP patch classifier
- Weighted-boundary log loss, Adam with a halving schedule, gradient checks
- Probability-map postprocessing: blur, threshold, closing, area filtering
- Binary/multiclass ensembling and shifted blending
- BachScore and Dice metrics
- Prediction features, boosted trees, repeated stratified CV and greedy
  model selection

Quick Start:
    >>> from histotnet import pipeline_demo
    >>> report = pipeline_demo(out_dir="runs/demo")
    >>> print(report.summary)

CLI Usage:
    histotnet synth --seed 7 --out data/
    histotnet train-seg --data data/ --out tnet1.nnw --toy
    histotnet demo

For more information, see README.md
"""

__version__ = "0.2.0"
__author__ = "HistoTNet Team"
__license__ = "MIT"

from histotnet.config import RunConfig, RuntimeSettings, load_config
from histotnet.core import CLASS_NAMES, NUM_CLASSES, Image, LabelMask, ProbMap, Rng
from histotnet.ensemble import blend_binary, compose_multiclass, shifted_blend, stitch
from histotnet.errors import (
    ConfigError,
    FormatError,
    GradientError,
    HistoTNetError,
    PayloadLengthError,
    UndefinedScoreError,
    ValidationError,
)
from histotnet.metrics import accuracy, bach_score, dice, seg_score, summarize
from histotnet.pipeline import classify_demo, pipeline_demo
from histotnet.postprocess import PostprocessConfig, postprocess_chain
from histotnet.stage_logger import StageLogger, stage_logger

__all__ = [
    "__version__",
    "CLASS_NAMES",
    "NUM_CLASSES",
    "ConfigError",
    "FormatError",
    "GradientError",
    "HistoTNetError",
    "Image",
    "LabelMask",
    "PayloadLengthError",
    "PostprocessConfig",
    "ProbMap",
    "Rng",
    "RunConfig",
    "RuntimeSettings",
    "StageLogger",
    "UndefinedScoreError",
    "ValidationError",
    "accuracy",
    "bach_score",
    "blend_binary",
    "classify_demo",
    "compose_multiclass",
    "dice",
    "load_config",
    "pipeline_demo",
    "postprocess_chain",
    "seg_score",
    "shifted_blend",
    "stage_logger",
    "stitch",
    "summarize",
]
