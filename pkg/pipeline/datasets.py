"""Magnetogram images on disk, their normalization, and the planted-feature generator."""
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from catalog.goes import flux_to_class
from catalog.models import FlareEvent, LabeledSample
from catalog.tables import read_manifest
from flarecast.exceptions import DataError, ShapeError

logger = logging.getLogger(__name__)

IMAGE_NAME = '%Y%m%dT%H%M%SZ.png'
PLANTED_FILE = 'planted.json'


def image_name(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime(IMAGE_NAME)


def normalize(pixels: np.ndarray) -> np.ndarray:
    """8-bit gray to [-1, 1]; mid-gray 127.5 is zero field."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_pixels(plane: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(plane, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def load_image(path, size: Optional[int] = None) -> np.ndarray:
    """Normalized [H,W] plane of a grayscale PNG, resized bilinearly to ``size`` if given."""
    try:
        with Image.open(path) as image:
            image = image.convert('L')
            if size is not None and image.size != (size, size):
                image = image.resize((size, size), Image.Resampling.BILINEAR)
            pixels = np.asarray(image)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return normalize(pixels)


def save_image(plane: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_pixels(plane)).save(path, format='PNG')
    return path


@dataclass
class ImageSet:
    """Images of a list of LabeledSamples, stacked in sample order."""

    samples: List[LabeledSample]
    images: np.ndarray
    missing: List[LabeledSample]

    def __len__(self):
        return len(self.samples)

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.target for s in self.samples], dtype=np.int64)

    def with_label(self, label: str) -> 'ImageSet':
        keep = [i for i, s in enumerate(self.samples) if s.label == label]
        return ImageSet([self.samples[i] for i in keep], self.images[keep],
                        [s for s in self.missing if s.label == label])

    def select(self, partitions: Sequence[int]) -> 'ImageSet':
        keep = [i for i, s in enumerate(self.samples) if s.partition in partitions]
        return ImageSet([self.samples[i] for i in keep], self.images[keep],
                        [s for s in self.missing if s.partition in partitions])


def load_images(samples: Sequence[LabeledSample], image_dir, size: Optional[int] = None) -> ImageSet:
    """Read every sample's image; unreadable or absent ones are listed in ``missing``."""
    image_dir = Path(image_dir)
    kept, planes, missing = [], [], []
    for sample in samples:
        path = image_dir / (sample.image_ref or image_name(sample.timestamp))
        if not path.exists():
            missing.append(sample)
            continue
        try:
            planes.append(load_image(path, size))
        except DataError as exc:
            logger.warning("%s", exc)
            missing.append(sample)
            continue
        kept.append(sample)
    if missing:
        logger.warning("%d of %d images missing under %s", len(missing), len(samples), image_dir)
    if not planes:
        raise DataError(f"no readable images under {image_dir}")
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ShapeError(f"images under {image_dir} differ in size: {sorted(shapes)}; pass a target size")
    return ImageSet(kept, np.stack(planes), missing)


# Desk-scale planted-feature data

SYNTHETIC_START = datetime(2015, 1, 1, tzinfo=timezone.utc)
SYNTHETIC_SPACING = timedelta(hours=48)
NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class PlantedSet:
    catalog: List[FlareEvent]
    timestamps: List[datetime]
    regions: Dict[str, Tuple[int, int, int, int]]


def bipolar_blob(size: int, row: int, col: int, radius: float, amplitude: float = 0.8) -> np.ndarray:
    """Positive and negative Gaussian lobes side by side, centred on (row, col)."""
    rows, cols = np.mgrid[0:size, 0:size]
    offset = radius
    sigma2 = 2.0 * (radius / 1.5) ** 2
    positive = np.exp(-((rows - row) ** 2 + (cols - col + offset) ** 2) / sigma2)
    negative = np.exp(-((rows - row) ** 2 + (cols - col - offset) ** 2) / sigma2)
    return amplitude * (positive - negative)


def synthesize(out_dir, count: int = 640, size: int = 64, fl_fraction: float = 0.5,
               seed: int = 0) -> PlantedSet:
    """Noise images, with a bipolar blob planted in the FL ones.

    Observations are 48 hours apart starting 2015-01-01 so they span every
    quarter. Each FL observation gets an M or X event peaking one hour later;
    NF observations get no event. Writes the images, ``planted.json`` (FL
    region boxes as (r0, r1, c0, c1) keyed by image name) and returns the
    catalog for labeling.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    radius = max(size / 16.0, 2.0)
    margin = int(np.ceil(3 * radius))
    catalog, timestamps, regions = [], [], {}
    for i in range(count):
        t = SYNTHETIC_START + i * SYNTHETIC_SPACING
        plane = rng.normal(0.0, NOISE_SIGMA, size=(size, size))
        if rng.random() < fl_fraction:
            row, col = rng.integers(margin, size - margin, size=2)
            plane += bipolar_blob(size, row, col, radius)
            regions[image_name(t)] = (int(row - margin), int(row + margin), int(col - margin), int(col + margin))
            flux = float(10 ** rng.uniform(-5.0, -3.7))
            catalog.append(FlareEvent(
                start_time=t + timedelta(minutes=30),
                peak_time=t + timedelta(hours=1),
                peak_flux=flux,
                class_label=flux_to_class(flux),
                hgs_latitude=float(rng.uniform(-40, 40)),
                hgs_longitude=float(rng.uniform(-90, 90)),
            ))
        save_image(plane, out_dir / image_name(t))
        timestamps.append(t)
    (out_dir / PLANTED_FILE).write_text(json.dumps(regions, indent=2), encoding='utf-8')
    logger.info("synthesized %d images (%d with a planted region) in %s", count, len(regions), out_dir)
    return PlantedSet(catalog, timestamps, regions)


def load_regions(image_dir) -> Dict[str, Tuple[int, int, int, int]]:
    path = Path(image_dir) / PLANTED_FILE
    if not path.exists():
        return {}
    return {name: tuple(box) for name, box in json.loads(path.read_text(encoding='utf-8')).items()}


def load_dataset(manifest, image_dir, size: Optional[int] = None) -> ImageSet:
    """Samples of a dataset manifest together with their images."""
    return load_images(read_manifest(manifest), image_dir, size)
