"""
T-Net: a U-Net whose skip connections pass through extra convolutions.

Level i of the encoder has C0·2^i channels (two conv3x3+relu, then maxpool2
except at the bottom). Each skip connection runs K conv3x3+relu blocks that
keep the channel count before it is concatenated with the upsampled decoder
path. With K = 0 the network is a plain U-Net.
"""
from dataclasses import dataclass
from typing import List

import numpy as np

from histotnet.core.rng import Rng
from histotnet.errors import ValidationError
from histotnet.nn import autograd as ag
from histotnet.nn.autograd import Tensor
from histotnet.nn.layers import (
    Conv2d,
    LayerSpec,
    Module,
    Sequential,
    Upsample2,
    conv_relu,
    format_descriptor,
    register_architecture,
)


@dataclass(frozen=True)
class TNetSpec:
    """
    Attributes:
        depth: Number of resolution levels D >= 1
        base_channels: Channels C0 at the top level
        skip_convs: Conv blocks K >= 0 on every skip connection
        out_classes: Output channels (1 for binary maps, 4 for multiclass)
        in_channels: Input channels
    """

    depth: int = 3
    base_channels: int = 8
    skip_convs: int = 1
    out_classes: int = 1
    in_channels: int = 3

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValidationError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValidationError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.skip_convs < 0:
            raise ValidationError(f"skip_convs must be >= 0, got {self.skip_convs}")
        if self.out_classes < 1 or self.in_channels < 1:
            raise ValidationError("in_channels and out_classes must be >= 1")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def divisor(self) -> int:
        """Input H and W must be multiples of this."""
        return 2 ** (self.depth - 1)

    def skip_parameter_count(self) -> int:
        """Weights added by skip convolutions: Σ_{i<D-1} K·(9·c_i² + c_i)."""
        return sum(
            self.skip_convs * (9 * self.channels(level) ** 2 + self.channels(level))
            for level in range(self.depth - 1)
        )

    def with_skip_convs(self, skip_convs: int) -> "TNetSpec":
        return TNetSpec(self.depth, self.base_channels, skip_convs, self.out_classes, self.in_channels)


def _check_input(x: Tensor, spec: TNetSpec) -> None:
    if x.data.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValidationError(f"Expected N×{spec.in_channels}×H×W input, got {x.shape}")
    height, width = x.shape[2:]
    if height % spec.divisor or width % spec.divisor:
        raise ValidationError(
            f"Input {height}×{width} is not divisible by {spec.divisor} (depth {spec.depth})"
        )


class _EncoderDecoder(Module):
    """Shared encoder/decoder construction. Subclasses decide the skip path."""

    def _build_trunk(self, spec: TNetSpec, rng: Rng) -> None:
        self.encoders: List[Sequential] = []
        for level in range(spec.depth):
            in_ch = spec.in_channels if level == 0 else spec.channels(level - 1)
            out_ch = spec.channels(level)
            self.encoders.append(Sequential(conv_relu(in_ch, out_ch, rng) + conv_relu(out_ch, out_ch, rng)))

    def _build_decoder(self, spec: TNetSpec, rng: Rng) -> None:
        self.ups: List[Sequential] = []
        self.decoders: List[Sequential] = []
        for level in reversed(range(spec.depth - 1)):
            channels = spec.channels(level)
            self.ups.append(Sequential([Upsample2(spec.channels(level + 1))]
                                       + conv_relu(spec.channels(level + 1), channels, rng)))
            self.decoders.append(Sequential(conv_relu(2 * channels, channels, rng)
                                            + conv_relu(channels, channels, rng)))
        self.head = Conv2d(spec.channels(0), spec.out_classes, kernel=1, rng=rng)

    def _skip(self, level: int, features: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        spec = self.spec
        _check_input(x, spec)
        skips = []
        h = x
        for level, encoder in enumerate(self.encoders):
            h = encoder(h)
            if level < spec.depth - 1:
                skips.append(self._skip(level, h))
                h = ag.max_pool2(h)
        for index, level in enumerate(reversed(range(spec.depth - 1))):
            up = self.ups[index](h)
            h = self.decoders[index](ag.concat([skips[level], up], axis=1))
        return self.head(h)

    def layer_specs(self) -> List[LayerSpec]:
        specs: List[LayerSpec] = []
        for module in self.encoders + self.ups + self.decoders + [self.head]:
            specs.extend(module.layer_specs())
        return specs


class TNet(_EncoderDecoder):
    """U-Net with K conv3x3+relu blocks on each skip connection."""

    kind = "tnet"

    def __init__(self, spec: TNetSpec, rng: Rng = None):
        rng = rng or Rng(0)
        self.spec = spec
        self._build_trunk(spec, rng)
        self.skips: List[Sequential] = []
        for level in range(spec.depth - 1):
            channels = spec.channels(level)
            blocks = []
            for _ in range(spec.skip_convs):
                blocks.extend(conv_relu(channels, channels, rng))
            self.skips.append(Sequential(blocks))
        self._build_decoder(spec, rng)

    def _skip(self, level: int, features: Tensor) -> Tensor:
        return self.skips[level](features)

    def descriptor(self) -> str:
        s = self.spec
        return format_descriptor("tnet", depth=s.depth, base=s.base_channels, skip=s.skip_convs,
                                 **{"in": s.in_channels}, out=s.out_classes)


class UNet(_EncoderDecoder):
    """Plain U-Net: the encoder features are concatenated unchanged."""

    kind = "unet"

    def __init__(self, spec: TNetSpec, rng: Rng = None):
        rng = rng or Rng(0)
        self.spec = spec.with_skip_convs(0)
        self._build_trunk(self.spec, rng)
        self._build_decoder(self.spec, rng)

    def _skip(self, level: int, features: Tensor) -> Tensor:
        return features

    def descriptor(self) -> str:
        s = self.spec
        return format_descriptor("unet", depth=s.depth, base=s.base_channels,
                                 **{"in": s.in_channels}, out=s.out_classes)


def build_tnet(spec: TNetSpec, seed: int = 0) -> TNet:
    """T-Net with Kaiming-uniform weights drawn from Rng(seed)."""
    return TNet(spec, Rng(seed))


@register_architecture("tnet")
def _tnet_from_descriptor(depth: int, base: int, skip: int, out: int, seed: int = 0,
                          **extra) -> TNet:
    spec = TNetSpec(depth=depth, base_channels=base, skip_convs=skip, out_classes=out,
                    in_channels=extra.pop("in", 3))
    if extra:
        raise ValidationError(f"Unexpected tnet descriptor keys: {sorted(extra)}")
    return build_tnet(spec, seed)


@register_architecture("unet")
def _unet_from_descriptor(depth: int, base: int, out: int, seed: int = 0, **extra) -> UNet:
    spec = TNetSpec(depth=depth, base_channels=base, skip_convs=0, out_classes=out,
                    in_channels=extra.pop("in", 3))
    if extra:
        raise ValidationError(f"Unexpected unet descriptor keys: {sorted(extra)}")
    return UNet(spec, Rng(seed))


def copy_weights(source: Module, target: Module) -> None:
    """Copy parameters between networks with the same parameter layout."""
    target.set_flat_weights(np.asarray(source.get_flat_weights()))
