"""
Core domain types, file formats, deterministic RNG and synthetic data.
"""
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
from histotnet.core.rng import ALGORITHM, Rng
from histotnet.core.synth import (
    SynthConfig,
    SynthSpec,
    synth_dataset,
    synth_microscopy,
    synth_slide,
)
from histotnet.core.types import (
    CLASS_NAMES,
    NUM_CLASSES,
    Image,
    LabelMask,
    ProbMap,
    as_pred_matrix,
    require_binary,
)

__all__ = [
    "ALGORITHM",
    "CLASS_NAMES",
    "NUM_CLASSES",
    "Image",
    "LabelMask",
    "ProbMap",
    "Rng",
    "SynthConfig",
    "SynthSpec",
    "as_pred_matrix",
    "read_image",
    "read_mask",
    "read_pred_matrix",
    "read_probmap",
    "require_binary",
    "synth_dataset",
    "synth_microscopy",
    "synth_slide",
    "write_image",
    "write_mask",
    "write_pred_matrix",
    "write_probmap",
]
