"""Weights files: for every parameter, a name line followed by one raster record."""
import logging
from pathlib import Path

import numpy as np

from autodiff.raster import read_raster, write_raster
from autodiff.tensor import Tensor
from flarecast.exceptions import ShapeError, WeightsFormatError

from .architecture import ArchitectureSpec
from .model import Model

logger = logging.getLogger(__name__)


def save_weights(model: Model, path, dtype: str = 'f64') -> Path:
    """Write parameters in spec order. ``dtype='f32'`` halves the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as stream:
        for name in model.spec.parameter_shapes():
            stream.write(name.encode('ascii') + b'\n')
            write_raster(stream, model.params[name].data, dtype=dtype)
    logger.info("saved %s weights (%d parameters) to %s", model.spec.name, model.parameter_count(), path)
    return path


def read_weights(path) -> dict:
    """Name -> float64 array, exactly as stored."""
    arrays = {}
    with Path(path).open('rb') as stream:
        while True:
            line = stream.readline()
            if not line:
                break
            if not line.endswith(b'\n'):
                raise WeightsFormatError(f"{path}: truncated parameter name {line[:40]!r}")
            name = line[:-1].decode('ascii', errors='replace')
            if name in arrays:
                raise WeightsFormatError(f"{path}: parameter {name} stored twice")
            try:
                arrays[name] = read_raster(stream)
            except WeightsFormatError as exc:
                raise WeightsFormatError(f"{path}: {name}: {exc}") from exc
    return arrays


def load_weights(spec: ArchitectureSpec, path) -> Model:
    """Rebuild a Model for ``spec`` from a weights file.

    Every parameter the spec declares must be present with its exact shape.
    """
    arrays = read_weights(path)
    expected = spec.parameter_shapes()
    for name, shape in expected.items():
        if name not in arrays:
            raise ShapeError(f"{path}: no weights for layer {name.split('.')[0]} ({name})")
        if arrays[name].shape != shape:
            raise ShapeError(
                f"{path}: layer {name.split('.')[0]} has {name} of shape {arrays[name].shape}, "
                f"{spec.name} expects {shape}"
            )
    extra = sorted(set(arrays) - set(expected))
    if extra:
        raise ShapeError(f"{path}: parameters not in {spec.name}: {', '.join(extra)}")
    model = Model(spec, {name: Tensor(np.asarray(arrays[name])) for name in expected})
    logger.info("loaded %s weights from %s", spec.name, path)
    return model
