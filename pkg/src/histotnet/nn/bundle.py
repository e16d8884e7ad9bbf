"""
NNW1 model files.

Layout:
    b"NNW1\\n"
    ASCII architecture line, e.g. b"tnet depth=2 base=4 skip=1 in=3 out=1 weights=1234\\n"
    weights × little-endian float32, in parameter traversal order
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from histotnet.errors import FormatError, PayloadLengthError, ValidationError
from histotnet.nn.layers import Module, build_from_descriptor, parse_descriptor

# Register the built-in architectures.
from histotnet.nn import classifier as _classifier  # noqa: F401
from histotnet.nn import tnet as _tnet  # noqa: F401

PathLike = Union[str, Path]

NNW_MAGIC = b"NNW1\n"


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Architecture descriptor plus flat float32 weights."""

    architecture: str
    weights: np.ndarray

    def __post_init__(self) -> None:
        if "\n" in self.architecture or not self.architecture.isascii():
            raise ValidationError("Architecture descriptor must be a single ASCII line")
        weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "weights", weights)

    @property
    def kind(self) -> str:
        return parse_descriptor(self.architecture)[0]

    def to_network(self) -> Module:
        """Rebuild the network; the weight count must match the architecture."""
        network = build_from_descriptor(self.architecture)
        expected = network.num_parameters()
        if expected != self.weights.size:
            raise ValidationError(
                f"Architecture '{self.architecture}' has {expected} weights, bundle holds {self.weights.size}"
            )
        network.set_flat_weights(self.weights)
        return network


def bundle_of(model: Module) -> ModelBundle:
    return ModelBundle(model.descriptor(), model.get_flat_weights())


def encode_bundle(bundle: ModelBundle) -> bytes:
    line = f"{bundle.architecture} weights={bundle.weights.size}\n".encode("ascii")
    return NNW_MAGIC + line + bundle.weights.astype("<f4").tobytes()


def decode_bundle(data: bytes, path: str = None) -> ModelBundle:
    if not data.startswith(NNW_MAGIC):
        raise FormatError("magic mismatch, expected NNW1", offset=0, path=path)
    start = len(NNW_MAGIC)
    end = data.find(b"\n", start)
    if end < 0:
        raise FormatError("missing architecture line", offset=start, path=path)
    try:
        line = data[start:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("architecture line is not ASCII", offset=start, path=path) from exc

    head, sep, count_text = line.rpartition(" weights=")
    if not sep:
        raise FormatError("architecture line lacks weights=<count>", offset=start, path=path)
    try:
        count = int(count_text)
    except ValueError as exc:
        raise FormatError(f"bad weight count '{count_text}'", offset=start, path=path) from exc
    if count < 0:
        raise FormatError(f"negative weight count {count}", offset=start, path=path)

    payload = data[end + 1:]
    if len(payload) != count * 4:
        raise PayloadLengthError(
            f"payload is {len(payload)} bytes, header declares {count} weights",
            offset=end + 1, path=path,
        )
    return ModelBundle(head, np.frombuffer(payload, dtype="<f4").astype(np.float32))


def save_model(path: PathLike, model: Union[Module, ModelBundle]) -> ModelBundle:
    """Write a network (or a bundle) as an NNW1 file; returns what was written."""
    bundle = model if isinstance(model, ModelBundle) else bundle_of(model)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_bundle(bundle))
    return bundle


def load_model(path: PathLike) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    return decode_bundle(path.read_bytes(), path=str(path))


def load_network(path: PathLike) -> Module:
    """load_model + rebuild; raises ValidationError on an architecture/count mismatch."""
    return load_model(path).to_network()
