"""
File formats: PNG images and masks, PMAP probability maps, PredMatrix CSV.

PMAP layout:
    b"PMAP1\\n"
    b"<K> <H> <W>\\n"            ASCII decimal, space separated
    K·H·W little-endian float32, channel-major then row-major
"""
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from histotnet.core.types import Image, LabelMask, ProbMap, as_pred_matrix
from histotnet.errors import FormatError, PayloadLengthError, ValidationError

PathLike = Union[str, Path]

PMAP_MAGIC = b"PMAP1\n"


def _open_png(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    try:
        with PILImage.open(path) as handle:
            handle.load()
            if handle.mode not in ("L", "RGB"):
                handle = handle.convert("RGB")
            return np.array(handle)
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a recognised image ({exc})", offset=0, path=str(path)) from exc
    except (OSError, SyntaxError) as exc:
        # Decoder ran out of data: report where the file ends.
        raise FormatError(f"malformed image data ({exc})", offset=path.stat().st_size,
                          path=str(path)) from exc


def read_image(path: PathLike) -> Image:
    """Read an 8-bit RGB or grayscale PNG."""
    return Image(_open_png(path))


def write_image(path: PathLike, image: Image) -> None:
    """Write an 8-bit image as PNG (RGB for 3 channels, grayscale for 1)."""
    if image.data.dtype != np.uint8:
        raise ValidationError("Only 8-bit images can be written as PNG")
    if image.channels == 3:
        pil = PILImage.fromarray(np.ascontiguousarray(image.data))
    elif image.channels == 1:
        pil = PILImage.fromarray(np.ascontiguousarray(image.data[:, :, 0]))
    else:
        raise ValidationError(f"Cannot write a {image.channels}-channel image as PNG")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def read_mask(path: PathLike) -> LabelMask:
    """Read a grayscale PNG whose raw pixel values are class ids 0..3."""
    array = _open_png(path)
    if array.ndim != 2:
        raise FormatError("mask must be a single-channel PNG", offset=0, path=str(path))
    return LabelMask(array)


def write_mask(path: PathLike, mask: LabelMask) -> None:
    """Write a LabelMask as grayscale PNG with raw class ids."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.ascontiguousarray(mask.labels)).save(path, format="PNG")


def encode_probmap(pmap: ProbMap) -> bytes:
    header = f"{pmap.classes} {pmap.height} {pmap.width}\n".encode("ascii")
    return PMAP_MAGIC + header + pmap.values.astype("<f4").tobytes(order="C")


def decode_probmap(data: bytes, path: str = None) -> ProbMap:
    if not data.startswith(PMAP_MAGIC):
        raise FormatError("magic mismatch, expected PMAP1", offset=0, path=path)
    start = len(PMAP_MAGIC)
    end = data.find(b"\n", start)
    if end < 0:
        raise FormatError("missing header line", offset=start, path=path)
    try:
        fields = data[start:end].decode("ascii").split(" ")
        classes, height, width = (int(item) for item in fields)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"bad header {data[start:end]!r}", offset=start, path=path) from exc
    if classes < 1 or height < 1 or width < 1:
        raise FormatError(f"non-positive dimensions {classes} {height} {width}",
                          offset=start, path=path)

    payload = data[end + 1:]
    expected = classes * height * width * 4
    if len(payload) != expected:
        raise PayloadLengthError(
            f"payload is {len(payload)} bytes, header declares {expected}",
            offset=end + 1, path=path,
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(classes, height, width)
    return ProbMap(values.astype(np.float32))


def read_probmap(path: PathLike) -> ProbMap:
    """Read a PMAP file; raises FormatError / PayloadLengthError / ValidationError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Probability map not found: {path}")
    return decode_probmap(path.read_bytes(), path=str(path))


def write_probmap(path: PathLike, pmap: ProbMap) -> None:
    """Write a PMAP file (bit-exact float32 payload)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_probmap(pmap))


def write_pred_matrix(path: PathLike, matrix: np.ndarray) -> None:
    """Write a P×K prediction matrix as CSV with columns class_0..class_{K-1}."""
    matrix = as_pred_matrix(matrix)
    columns = [f"class_{k}" for k in range(matrix.shape[1])]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(matrix, columns=columns).to_csv(path, index=False, float_format="%.17g")


def read_pred_matrix(path: PathLike) -> np.ndarray:
    frame = pd.read_csv(path)
    return as_pred_matrix(frame.to_numpy(dtype=np.float64))
