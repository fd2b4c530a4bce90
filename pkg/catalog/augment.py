"""Flip and small-rotation copies of FL training images."""
import logging
from typing import List, Sequence

import numpy as np
from PIL import Image

from autodiff.tensor import Tensor
from flarecast.exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

AUGMENTATIONS = ('vflip', 'hflip', 'rotate')
MAX_ROTATION = 5.0


def _plane(image: Tensor) -> np.ndarray:
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"augmentation expects a [1,H,W] image, got {image.shape}")
    return image.data[0]


def vflip(image: Tensor) -> Tensor:
    return Tensor(_plane(image)[::-1, :][None])


def hflip(image: Tensor) -> Tensor:
    return Tensor(_plane(image)[:, ::-1][None])


def rotate(image: Tensor, degrees: float) -> Tensor:
    """Counter-clockwise rotation about the image center, bilinear, zero fill."""
    plane = Image.fromarray(np.ascontiguousarray(_plane(image), dtype=np.float32))
    rotated = plane.rotate(degrees, resample=Image.Resampling.BILINEAR, fillcolor=0.0)
    return Tensor(np.asarray(rotated, dtype=np.float64)[None])


def augment(image: Tensor, kinds: Sequence[str] = AUGMENTATIONS, seed: int = 0) -> List[Tensor]:
    """One transformed copy per kind, in the order given.

    The rotation angle is drawn uniformly from [-5, 5] degrees by ``seed``.
    """
    if not kinds:
        raise ConfigError("augment needs at least one kind")
    unknown = [k for k in kinds if k not in AUGMENTATIONS]
    if unknown:
        raise ConfigError(f"unknown augmentation {unknown}; choose from {AUGMENTATIONS}")
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-MAX_ROTATION, MAX_ROTATION)
    out = []
    for kind in kinds:
        if kind == 'vflip':
            out.append(vflip(image))
        elif kind == 'hflip':
            out.append(hflip(image))
        else:
            out.append(rotate(image, angle))
    return out
