"""Portable raster format shared by weights files and attribution maps.

One header line of compact JSON, ``{"dtype":"f64","shape":[H,W]}``, a newline,
then the raw little-endian values in row-major order. Nothing else.
"""
import json
import logging
from pathlib import Path

import numpy as np

from flarecast.exceptions import WeightsFormatError

logger = logging.getLogger(__name__)

DTYPES = {
    'f32': np.dtype('<f4'),
    'f64': np.dtype('<f8'),
}


def encode_header(dtype: str, shape) -> bytes:
    header = {'dtype': dtype, 'shape': [int(dim) for dim in shape]}
    return json.dumps(header, separators=(',', ':')).encode('ascii') + b'\n'


def decode_header(line: bytes):
    if not line.endswith(b'\n'):
        raise WeightsFormatError("raster header is not newline-terminated")
    try:
        header = json.loads(line.decode('ascii'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"malformed raster header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {'dtype', 'shape'}:
        raise WeightsFormatError(f"malformed raster header: {line[:80]!r}")
    if header['dtype'] not in DTYPES:
        raise WeightsFormatError(f"unsupported raster dtype {header['dtype']!r}")
    shape = header['shape']
    if not isinstance(shape, list) or not all(isinstance(dim, int) and dim > 0 for dim in shape):
        raise WeightsFormatError(f"malformed raster shape {shape!r}")
    return header['dtype'], tuple(shape)


def write_raster(stream, array, dtype: str = 'f64') -> None:
    array = np.asarray(array)
    if dtype not in DTYPES:
        raise WeightsFormatError(f"unsupported raster dtype {dtype!r}")
    stream.write(encode_header(dtype, array.shape))
    stream.write(np.ascontiguousarray(array, dtype=DTYPES[dtype]).tobytes(order='C'))


def read_raster(stream) -> np.ndarray:
    """Read one header + payload record; the result is float64."""
    dtype, shape = decode_header(stream.readline())
    expected = int(np.prod(shape)) * DTYPES[dtype].itemsize
    payload = stream.read(expected)
    if len(payload) != expected:
        raise WeightsFormatError(
            f"payload length {len(payload)} bytes, header {shape} {dtype} needs {expected}"
        )
    return np.frombuffer(payload, dtype=DTYPES[dtype]).reshape(shape).astype(np.float64)


def save_raster(path, array, dtype: str = 'f64') -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as stream:
        write_raster(stream, array, dtype=dtype)
    logger.debug("wrote raster %s %s", path, np.shape(array))
    return path


def load_raster(path) -> np.ndarray:
    with Path(path).open('rb') as stream:
        array = read_raster(stream)
        if stream.read(1):
            raise WeightsFormatError(f"{path}: trailing bytes after raster payload")
    return array
