"""
Layers, modules and the architecture registry.

Modules hold parameters as Tensors and compose the differentiable ops of
`histotnet.nn.autograd`. Parameters are discovered by walking attributes in
assignment order, which fixes the flat weight order used by model bundles.

Architectures register a constructor under a kind name so a bundle's ASCII
descriptor ("tnet depth=2 base=4 skip=1 in=3 out=1") can be turned back into
a network:

    >>> @register_architecture("tnet")
    ... def _build(depth, base, skip, out, **kw): ...
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from histotnet.core.rng import Rng
from histotnet.errors import ValidationError
from histotnet.nn import autograd as ag
from histotnet.nn.autograd import Tensor

LAYER_KINDS = ("conv3x3", "conv1x1", "relu", "maxpool2", "avgpool2", "upsample2", "dense", "spp")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a chain; `extra` holds kind-specific settings (spp levels...)."""

    kind: str
    in_channels: int
    out_channels: int
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"Unknown layer kind '{self.kind}'")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(f"{self.kind}: channel counts must be positive")


def check_chain(specs: Sequence[LayerSpec]) -> None:
    """Each layer must consume what the previous one produces."""
    for previous, current in zip(specs, specs[1:]):
        if previous.out_channels != current.in_channels:
            raise ValidationError(
                f"{previous.kind} produces {previous.out_channels} channels "
                f"but {current.kind} expects {current.in_channels}"
            )


class Module:
    """Base class for layers and networks."""

    kind = "module"

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{index}.")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.grad = None

    def num_parameters(self) -> int:
        return sum(tensor.data.size for tensor in self.parameters())

    def get_flat_weights(self) -> np.ndarray:
        """All parameters concatenated in traversal order, as float32."""
        parts = [tensor.data.astype(np.float32).reshape(-1) for tensor in self.parameters()]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.float32)

    def set_flat_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        expected = self.num_parameters()
        if flat.ndim != 1 or flat.size != expected:
            raise ValidationError(f"Expected {expected} weights, got {flat.size}")
        offset = 0
        for tensor in self.parameters():
            size = tensor.data.size
            tensor.data = flat[offset:offset + size].reshape(tensor.shape).astype(np.float32)
            offset += size

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for finite differences)."""
        for tensor in self.parameters():
            tensor.data = tensor.data.astype(dtype)
        return self

    def layer_specs(self) -> List[LayerSpec]:
        return []

    def descriptor(self) -> str:
        """ASCII architecture line understood by `build_from_descriptor`."""
        raise ValidationError(f"{type(self).__name__} has no registered architecture")


def _kaiming_uniform(shape: Tuple[int, ...], fan_in: int, rng: Rng) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    """k×k convolution, stride 1, zero same-padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 rng: Optional[Rng] = None):
        if kernel not in (1, 3):
            raise ValidationError(f"Only 1×1 and 3×3 convolutions are supported, got {kernel}")
        rng = rng or Rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(_kaiming_uniform((out_channels, in_channels, kernel, kernel), fan_in, rng),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"conv{self.kernel}x{self.kernel} expects {self.in_channels} channels, got shape {x.shape}"
            )
        return ag.conv2d(x, self.weight, self.bias)

    def layer_specs(self) -> List[LayerSpec]:
        kind = "conv3x3" if self.kernel == 3 else "conv1x1"
        return [LayerSpec(kind, self.in_channels, self.out_channels)]


class _Stateless(Module):
    kind_name = ""
    op: Callable[[Tensor], Tensor]

    def __init__(self, channels: int = 1):
        self.channels = channels

    def forward(self, x: Tensor) -> Tensor:
        return type(self).op(x)

    def layer_specs(self) -> List[LayerSpec]:
        return [LayerSpec(self.kind_name, self.channels, self.channels)]


class ReLU(_Stateless):
    kind_name = "relu"
    op = staticmethod(ag.relu)


class MaxPool2(_Stateless):
    kind_name = "maxpool2"
    op = staticmethod(ag.max_pool2)


class AvgPool2(_Stateless):
    kind_name = "avgpool2"
    op = staticmethod(ag.avg_pool2)


class Upsample2(_Stateless):
    kind_name = "upsample2"
    op = staticmethod(ag.upsample2)


class Dense(Module):
    """Fully connected layer on N×F features."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[Rng] = None):
        rng = rng or Rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(_kaiming_uniform((in_features, out_features), in_features, rng),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ag.dense(x, self.weight, self.bias)

    def layer_specs(self) -> List[LayerSpec]:
        return [LayerSpec("dense", self.in_features, self.out_features)]


class SPP(Module):
    """Average spatial pyramid pooling with levels 1..L."""

    def __init__(self, channels: int, levels: int):
        if levels < 1:
            raise ValidationError(f"SPP needs at least one level, got {levels}")
        self.channels = channels
        self.levels = levels

    @property
    def out_features(self) -> int:
        return ag.spp_length(self.channels, self.levels)

    def forward(self, x: Tensor) -> Tensor:
        return ag.spp(x, self.levels)

    def layer_specs(self) -> List[LayerSpec]:
        return [LayerSpec("spp", self.channels, self.out_features, {"levels": self.levels})]


class Sequential(Module):
    """Layers applied in order; empty means identity."""

    def __init__(self, layers: Sequence[Module] = ()):
        self.layers = list(layers)
        check_chain(self.layer_specs())

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def layer_specs(self) -> List[LayerSpec]:
        return [spec for layer in self.layers for spec in layer.layer_specs()]


def conv_relu(in_channels: int, out_channels: int, rng: Rng) -> List[Module]:
    return [Conv2d(in_channels, out_channels, 3, rng), ReLU(out_channels)]


# ============================================================================
# forward / backward entry points
# ============================================================================

def forward(model: Module, inputs) -> Tensor:
    """Run the model; numpy inputs are wrapped in a constant Tensor."""
    return model(ag.as_tensor(inputs))


def backward(model: Module, output: Tensor, loss_grad: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """
    Back-propagate `loss_grad` from `output` and return one gradient per parameter.

    Parameters the output does not depend on get zero gradients.
    """
    model.zero_grad()
    output.backward(loss_grad)
    return [
        tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for tensor in model.parameters()
    ]


# ============================================================================
# Architecture registry
# ============================================================================

Builder = Callable[..., Module]


class ArchitectureRegistry:
    """Maps descriptor kind names to network constructors."""

    def __init__(self):
        self._builders: Dict[str, Builder] = {}

    def register(self, kind: str) -> Callable[[Builder], Builder]:
        """Decorator registering `builder` under `kind`."""
        def decorator(builder: Builder) -> Builder:
            if kind in self._builders:
                raise ValidationError(f"Architecture '{kind}' is already registered")
            self._builders[kind] = builder
            return builder
        return decorator

    def build(self, kind: str, **params: Any) -> Module:
        if kind not in self._builders:
            raise ValidationError(f"Unknown architecture '{kind}'")
        try:
            return self._builders[kind](**params)
        except TypeError as exc:
            raise ValidationError(f"Bad parameters for architecture '{kind}': {exc}") from exc

    def get_kinds(self) -> List[str]:
        return sorted(self._builders)


architectures = ArchitectureRegistry()
register_architecture = architectures.register


def format_descriptor(kind: str, **params: Any) -> str:
    """`kind key=value ...`; tuples are written comma-separated."""
    parts = [kind]
    for key, value in params.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        parts.append(f"{key}={value}")
    return " ".join(parts)


def _parse_value(text: str) -> Any:
    if "," in text:
        return tuple(int(item) for item in text.split(","))
    try:
        return int(text)
    except ValueError:
        return text


def parse_descriptor(line: str) -> Tuple[str, Dict[str, Any]]:
    """Inverse of `format_descriptor`."""
    tokens = line.strip().split()
    if not tokens:
        raise ValidationError("Empty architecture descriptor")
    params: Dict[str, Any] = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep or not key or not value:
            raise ValidationError(f"Malformed descriptor token '{token}'")
        try:
            params[key] = _parse_value(value)
        except ValueError as exc:
            raise ValidationError(f"Malformed descriptor value '{token}'") from exc
    return tokens[0], params


def build_from_descriptor(line: str, seed: int = 0) -> Module:
    kind, params = parse_descriptor(line)
    return architectures.build(kind, seed=seed, **params)
