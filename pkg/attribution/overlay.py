"""Diverging-colour rendering of attribution maps.

With v the map and s the 99th percentile of |v| (1 when that is zero),
u = clip(v / s, -1, 1). Positive u blends white towards red,
(255, 255(1-u), 255(1-u)); negative u blends white towards blue,
(255(1+u), 255(1+u), 255). Given a gray image g in [-1, 1], its 8-bit
value g8 = rint((g + 1) * 127.5) is shown through where |u| is small:
rgb = |u| * colour + (1 - |u|) * g8. Channels are rounded half to even.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from autodiff.tensor import Tensor
from flarecast.exceptions import ShapeError

logger = logging.getLogger(__name__)

CLIP_PERCENTILE = 99.0


def clip_scale(values: np.ndarray, percentile: float = CLIP_PERCENTILE) -> float:
    scale = float(np.percentile(np.abs(values), percentile))
    return scale if scale > 0 else 1.0


def normalized(values, percentile: float = CLIP_PERCENTILE) -> np.ndarray:
    values = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    return np.clip(values / clip_scale(values, percentile), -1.0, 1.0)


def diverging_rgb(u: np.ndarray) -> np.ndarray:
    """[H,W] in [-1, 1] to float RGB [H,W,3] in [0, 255]."""
    positive = np.clip(u, 0.0, 1.0)
    negative = np.clip(u, -1.0, 0.0)
    red = 255.0 * (1.0 + negative)
    green = 255.0 * (1.0 - positive) * (1.0 + negative)
    blue = 255.0 * (1.0 - positive)
    return np.stack([red, green, blue], axis=-1)


def gray_to_uint8(gray: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(gray, -1.0, 1.0) + 1.0) * 127.5)


def render_overlay(values, background: Optional[np.ndarray] = None) -> np.ndarray:
    """uint8 RGB array for a map, optionally over the gray image it explains."""
    u = normalized(values)
    colour = diverging_rgb(u)
    if background is not None:
        background = np.asarray(background, dtype=np.float64)
        if background.ndim == 3 and background.shape[0] == 1:
            background = background[0]
        if background.shape != u.shape:
            raise ShapeError(f"background {background.shape} does not match map {u.shape}")
        alpha = np.abs(u)[..., None]
        colour = alpha * colour + (1.0 - alpha) * gray_to_uint8(background)[..., None]
    return np.rint(colour).astype(np.uint8)


def save_overlay(values, path, background: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_overlay(values, background)).save(path, format='PNG')
    logger.info("wrote overlay %s", path)
    return path
