"""
Colour overlays of label masks on slides.

Red marks Benign, green InSitu and blue Invasive; Normal pixels are left
as they are.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from histotnet.core.types import BENIGN, IN_SITU, INVASIVE, Image, LabelMask
from histotnet.errors import ValidationError

OVERLAY_COLOURS = {
    BENIGN: (255, 0, 0),
    IN_SITU: (0, 255, 0),
    INVASIVE: (0, 0, 255),
}


class RenderConfig(BaseModel):
    """`[render]` section."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(default=0.5, ge=0.0, le=1.0, description="Colour weight of the overlay")


def overlay(image: Image, mask: LabelMask, alpha: float = 0.5) -> Image:
    """
    Alpha-blend class colours over an 8-bit RGB (or grayscale) image.

    Args:
        image: Slide to draw on
        mask: Labels of the same height and width
        alpha: Colour weight in [0, 1]

    Returns:
        8-bit RGB image
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if (image.height, image.width) != mask.shape:
        raise ValidationError(f"Image {image.height}×{image.width} does not match mask {mask.shape}")
    data = image.data
    if image.is_float:
        data = np.clip(data, 0, 255)
    rgb = np.broadcast_to(data, data.shape[:2] + (3,)) if image.channels == 1 else data[:, :, :3]
    out = rgb.astype(np.float64)
    for cls, colour in OVERLAY_COLOURS.items():
        where = mask.labels == cls
        out[where] = (1.0 - alpha) * out[where] + alpha * np.asarray(colour, dtype=np.float64)
    return Image(np.floor(out + 0.5).clip(0, 255).astype(np.uint8))
