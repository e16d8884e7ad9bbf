"""
Patch classifier: a small conv stack, average SPP and a dense head.

SPP makes the feature length independent of the patch size, so a network
trained on one patch size can score another.
"""
from typing import List, Sequence

import numpy as np

from histotnet.core.rng import Rng
from histotnet.core.types import NUM_CLASSES
from histotnet.errors import ValidationError
from histotnet.nn import autograd as ag
from histotnet.nn.autograd import Tensor
from histotnet.nn.layers import (
    SPP,
    Dense,
    LayerSpec,
    MaxPool2,
    Module,
    Sequential,
    conv_relu,
    format_descriptor,
    register_architecture,
)

HEADS = ("multiclass", "one-vs-all")


class PatchClassifier(Module):
    """
    conv3x3+relu stages (maxpool2 between them) → SPP → dense.

    Args:
        in_channels: Input channels
        widths: Channels of each stage
        spp_levels: Pyramid depth L (1 = global average pooling)
        out_classes: 4 for the multiclass head, 1 for one-vs-all
        head: "multiclass" (softmax) or "one-vs-all" (sigmoid)
        rng: Weight initialisation stream
    """

    kind = "classifier"

    def __init__(self, in_channels: int = 3, widths: Sequence[int] = (8, 16), spp_levels: int = 3,
                 out_classes: int = NUM_CLASSES, head: str = "multiclass", rng: Rng = None):
        if head not in HEADS:
            raise ValidationError(f"head must be one of {HEADS}, got '{head}'")
        if head == "one-vs-all" and out_classes != 1:
            raise ValidationError("one-vs-all classifiers have a single output")
        if head == "multiclass" and out_classes < 2:
            raise ValidationError("multiclass classifiers need at least two outputs")
        if not widths or min(widths) < 1:
            raise ValidationError(f"widths must be positive, got {tuple(widths)}")
        rng = rng or Rng(0)
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        self.head = head
        self.out_classes = out_classes

        layers: List[Module] = []
        previous = in_channels
        for index, width in enumerate(self.widths):
            if index > 0:
                layers.append(MaxPool2(previous))
            layers.extend(conv_relu(previous, width, rng))
            previous = width
        self.stages = Sequential(layers)
        self.spp = SPP(previous, spp_levels)
        self.dense = Dense(self.spp.out_features, out_classes, rng)

    @property
    def spp_levels(self) -> int:
        return self.spp.levels

    @property
    def min_patch(self) -> int:
        """Smallest patch side that survives the pools and the pyramid."""
        return max(2, self.spp_levels) * 2 ** (len(self.widths) - 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValidationError(f"Expected N×{self.in_channels}×H×W input, got {x.shape}")
        return self.dense(self.spp(self.stages(x)))

    def probabilities(self, logits: Tensor) -> Tensor:
        """Softmax over classes or sigmoid of the single output."""
        if self.head == "multiclass":
            return ag.softmax(logits, axis=1)
        return ag.sigmoid(logits)

    def predict_proba(self, patches: np.ndarray) -> np.ndarray:
        """N×K probabilities for an N×C×h×w batch."""
        return self.probabilities(self(Tensor(patches))).data.astype(np.float64)

    def layer_specs(self) -> List[LayerSpec]:
        return self.stages.layer_specs() + self.spp.layer_specs() + self.dense.layer_specs()

    def descriptor(self) -> str:
        return format_descriptor("classifier", **{"in": self.in_channels}, widths=self.widths,
                                 spp=self.spp_levels, out=self.out_classes, head=self.head)


def build_classifier(in_channels: int = 3, widths: Sequence[int] = (8, 16), spp_levels: int = 3,
                     out_classes: int = NUM_CLASSES, head: str = "multiclass",
                     seed: int = 0) -> PatchClassifier:
    return PatchClassifier(in_channels, widths, spp_levels, out_classes, head, Rng(seed))


@register_architecture("classifier")
def _classifier_from_descriptor(widths, spp: int, out: int, head: str = "multiclass",
                                seed: int = 0, **extra) -> PatchClassifier:
    if isinstance(widths, int):
        widths = (widths,)
    in_channels = extra.pop("in", 3)
    if extra:
        raise ValidationError(f"Unexpected classifier descriptor keys: {sorted(extra)}")
    return build_classifier(in_channels, tuple(widths), spp, out, head, seed)
