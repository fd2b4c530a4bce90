"""Gradient-based attribution for one decision of a flare network.

Every method takes either a ``network.model.Model`` or any callable that maps
a gray batch [N,1,H,W] to logits [N,2], so the same code runs on the real
network and on small hand-built functions. Images are single gray frames,
[H,W] or [1,H,W]. Attributions against the duplicated 3-channel input are
summed back onto the gray frame by the recorded channel copy.
"""
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from autodiff.backward import backward
from autodiff.modes import GUIDED, STANDARD, Rescale
from autodiff.raster import load_raster, save_raster
from autodiff.tensor import Tape, Tensor
from flarecast.exceptions import ConfigError, PropertyViolation, ShapeError
from network.architecture import FL, NF
from network.model import Model

logger = logging.getLogger(__name__)

TARGETS = {'FL': FL, 'NF': NF}
IG_STEPS = 256
IG_CHUNK = 32
SUMMATION_TOLERANCE = 1e-6


class Method(str, enum.Enum):
    GRAD_CAM = 'gradcam'
    GUIDED_BACKPROP = 'guided'
    GUIDED_GRAD_CAM = 'ggcam'
    INTEGRATED_GRADIENTS = 'ig'
    DEEP_SHAP = 'deepshap'
    OCCLUSION = 'occlusion'


@dataclass(frozen=True)
class AttributionMap:
    """Signed relevance per input pixel, for one method and target class."""

    values: Tensor
    method: Method
    target_class: str
    metadata: Dict = field(default_factory=dict)
    completeness_residual: Optional[float] = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"attribution map must be [H,W], got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape

    def numpy(self) -> np.ndarray:
        return self.values.numpy()

    def save(self, path) -> Path:
        """Raster at ``path`` plus a JSON sidecar with the method metadata."""
        path = save_raster(path, self.values.data)
        sidecar = {
            'method': self.method.value,
            'target_class': self.target_class,
            'completeness_residual': self.completeness_residual,
            'metadata': self.metadata,
        }
        path.with_suffix('.json').write_text(json.dumps(sidecar, indent=2), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path) -> 'AttributionMap':
        path = Path(path)
        sidecar = json.loads(path.with_suffix('.json').read_text(encoding='utf-8'))
        return cls(
            values=Tensor(load_raster(path)),
            method=Method(sidecar['method']),
            target_class=sidecar['target_class'],
            metadata=sidecar.get('metadata', {}),
            completeness_residual=sidecar.get('completeness_residual'),
        )


@dataclass(frozen=True)
class BaselineSet:
    """Reference images for Integrated Gradients / Deep SHAP."""

    images: Tuple[np.ndarray, ...]
    kind: str = 'provided'

    def __post_init__(self):
        if not self.images:
            raise ConfigError("baseline set is empty")
        shapes = {np.shape(image) for image in self.images}
        if len(shapes) != 1:
            raise ShapeError(f"baseline images differ in shape: {sorted(shapes)}")

    @classmethod
    def zero(cls, shape) -> 'BaselineSet':
        return cls((np.zeros(shape),), kind='zero')

    @classmethod
    def provided(cls, images: Sequence[np.ndarray], include_zero: bool = False) -> 'BaselineSet':
        images = [np.asarray(image, dtype=np.float64).reshape(np.shape(image)[-2:]) for image in images]
        if include_zero and images:
            images.append(np.zeros_like(images[0]))
        return cls(tuple(images), kind='provided')

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def describe(self) -> str:
        return f"{self.kind}[{len(self)}]"


def background_indices(available: int, count: int = 10, seed: int = 0):
    """Sorted seeded draw of ``count`` distinct indices out of ``available``."""
    if available < 1:
        raise ConfigError("no NF images to draw Deep SHAP backgrounds from")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(available, size=min(count, available), replace=False))


def default_backgrounds(nf_images: Sequence[np.ndarray], count: int = 10, seed: int = 0) -> BaselineSet:
    """``count`` seeded draws from NF images, plus the zero image."""
    picks = background_indices(len(nf_images), count, seed)
    return BaselineSet.provided([nf_images[i] for i in picks], include_zero=True)


def target_index(target_class) -> int:
    if target_class in (FL, NF):
        return int(target_class)
    try:
        return TARGETS[target_class]
    except KeyError:
        raise ConfigError(f"target class must be FL or NF, got {target_class!r}") from None


def _target_name(target_class) -> str:
    return 'FL' if target_index(target_class) == FL else 'NF'


def _network(model):
    return model.forward_gray if isinstance(model, Model) else model


def _as_plane(image) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if data.ndim == 3 and data.shape[0] == 1:
        data = data[0]
    if data.ndim == 4 and data.shape[:2] == (1, 1):
        data = data[0, 0]
    if data.ndim != 2:
        raise ShapeError(f"expected a gray image [H,W] or [1,H,W], got {data.shape}")
    return data


def _batch(planes) -> np.ndarray:
    return np.stack([np.asarray(p, dtype=np.float64) for p in planes])[:, None]


def target_logits(model, planes, target_class) -> np.ndarray:
    """Target logit for each image, without recording."""
    logits = _network(model)(Tensor(_batch(planes)))
    return logits.data[:, target_index(target_class)].copy()


def _logit_gradient(model, batch, target, mode=STANDARD, reference=None):
    """d logit_target / d input for every row of ``batch``; also returns both logits."""
    forward = _network(model)
    reference_logits = None
    if reference is not None:
        with Tape() as reference_tape:
            reference_logits = forward(Tensor(reference)).data[:, target]
        mode = Rescale(reference_tape)
    x = Tensor(batch, requires_grad=True)
    with Tape() as tape:
        logits = forward(x)
    seed = np.zeros(logits.shape)
    seed[:, target] = 1.0
    grads = backward(tape, logits, mode=mode, seed=seed)
    return grads.wrt(x), logits.data[:, target], reference_logits


def cam_from_activations(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """ReLU(sum_k alpha_k A^k), alpha_k the spatial mean of dlogit/dA^k. Inputs are [K,h,w]."""
    alphas = gradients.mean(axis=(1, 2))
    return np.maximum(np.tensordot(alphas, activations, axes=1), 0.0)


def upsample_bilinear(plane: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    height, width = size
    image = Image.fromarray(np.ascontiguousarray(plane, dtype=np.float32))
    return np.asarray(image.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float64)


def grad_cam(model: Model, image, target_class) -> Tuple[np.ndarray, np.ndarray]:
    """Coarse [h,w] Grad-CAM map from the tapped layer and its bilinear upsampling to [H,W]."""
    if not isinstance(model, Model) or model.spec.tap is None:
        raise ConfigError("Grad-CAM needs a network with a final convolutional tap")
    plane = _as_plane(image)
    target = target_index(target_class)
    x = Tensor(_batch([plane]), requires_grad=True)
    with Tape() as tape:
        logits = model.forward_gray(x, cache=True)
        activations = model.cache[model.spec.tap]
    seed = np.zeros(logits.shape)
    seed[:, target] = 1.0
    grads = backward(tape, logits, seed=seed)
    coarse = cam_from_activations(activations.data[0], grads.wrt(activations)[0])
    return coarse, upsample_bilinear(coarse, plane.shape)


def guided_backprop(model, image, target_class) -> np.ndarray:
    plane = _as_plane(image)
    grad, _, _ = _logit_gradient(model, _batch([plane]), target_index(target_class), mode=GUIDED)
    return grad[0, 0]


def grad_cam_map(model: Model, image, target_class) -> AttributionMap:
    coarse, upsampled = grad_cam(model, image, target_class)
    return AttributionMap(
        values=Tensor(upsampled),
        method=Method.GRAD_CAM,
        target_class=_target_name(target_class),
        metadata={'cam_shape': list(coarse.shape), 'tap': model.spec.tap},
    )


def guided_backprop_map(model, image, target_class) -> AttributionMap:
    return AttributionMap(
        values=Tensor(guided_backprop(model, image, target_class)),
        method=Method.GUIDED_BACKPROP,
        target_class=_target_name(target_class),
    )


def guided_grad_cam(model: Model, image, target_class) -> AttributionMap:
    coarse, upsampled = grad_cam(model, image, target_class)
    guided = guided_backprop(model, image, target_class)
    return AttributionMap(
        values=Tensor(upsampled * guided),
        method=Method.GUIDED_GRAD_CAM,
        target_class=_target_name(target_class),
        metadata={'cam_shape': list(coarse.shape), 'cam_max': float(coarse.max())},
    )


def integrated_gradients(model, image, target_class, baseline=None, steps: int = IG_STEPS,
                         chunk: int = IG_CHUNK) -> AttributionMap:
    """Midpoint-rule path integral of gradients from ``baseline`` (zeros by default) to the image."""
    if steps < 1:
        raise ConfigError(f"integrated gradients needs at least one step, got {steps}")
    plane = _as_plane(image)
    reference = np.zeros_like(plane) if baseline is None else _as_plane(baseline)
    if reference.shape != plane.shape:
        raise ShapeError(f"baseline shape {reference.shape} does not match image {plane.shape}")
    target = target_index(target_class)
    delta = plane - reference
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(plane)
    for start in range(0, steps, chunk):
        points = reference + alphas[start:start + chunk, None, None] * delta
        grad, _, _ = _logit_gradient(model, points[:, None], target)
        total += grad[:, 0].sum(axis=0)
    values = delta * total / steps
    f_x, f_ref = target_logits(model, [plane, reference], target)
    residual = float(values.sum() - (f_x - f_ref))
    return AttributionMap(
        values=Tensor(values),
        method=Method.INTEGRATED_GRADIENTS,
        target_class=_target_name(target_class),
        metadata={'baseline': 'zero' if baseline is None else 'provided', 'steps': steps,
                  'f_input': float(f_x), 'f_baseline': float(f_ref)},
        completeness_residual=residual,
    )


def deep_shap(model, image, target_class, backgrounds: BaselineSet) -> AttributionMap:
    """Mean over backgrounds of (x - b) times the rescale multipliers against b."""
    if backgrounds is None or not len(backgrounds):
        raise ConfigError("Deep SHAP needs at least one background")
    plane = _as_plane(image)
    target = target_index(target_class)
    attributions, residuals, deltas = [], [], []
    for background in backgrounds:
        background = _as_plane(background)
        if background.shape != plane.shape:
            raise ShapeError(f"background shape {background.shape} does not match image {plane.shape}")
        multipliers, f_x, f_b = _logit_gradient(model, _batch([plane]), target,
                                                reference=_batch([background]))
        attribution = (plane - background) * multipliers[0, 0]
        attributions.append(attribution)
        deltas.append(float(f_x[0] - f_b[0]))
        residuals.append(float(attribution.sum() - deltas[-1]))
    values = np.mean(attributions, axis=0)
    return AttributionMap(
        values=Tensor(values),
        method=Method.DEEP_SHAP,
        target_class=_target_name(target_class),
        metadata={'baseline': backgrounds.describe(), 'backgrounds': len(backgrounds),
                  'deltas': deltas, 'residuals': residuals},
        completeness_residual=float(np.mean(np.abs(residuals))),
    )


def summation_errors(amap: AttributionMap):
    """Per-background |sum(attribution) - delta| / |delta| of a Deep SHAP map."""
    deltas = np.asarray(amap.metadata['deltas'])
    residuals = np.asarray(amap.metadata['residuals'])
    return np.abs(residuals) / np.maximum(np.abs(deltas), 1e-12)


def check_summation_to_delta(amap: AttributionMap, tolerance: float = SUMMATION_TOLERANCE):
    errors = summation_errors(amap)
    worst = float(errors.max())
    if worst > tolerance:
        raise PropertyViolation(f"Deep SHAP summation-to-delta off by {worst:.3e} (tolerance {tolerance})")
    return errors


def completeness_bound(amap: AttributionMap, relative: float = 1e-3, absolute: float = 1e-6) -> float:
    """relative * |f(x) - f(baseline)| + absolute, the allowed IG residual."""
    return relative * abs(amap.metadata['f_input'] - amap.metadata['f_baseline']) + absolute


def check_completeness(amap: AttributionMap, relative: float = 1e-3, absolute: float = 1e-6) -> float:
    bound = completeness_bound(amap, relative, absolute)
    if abs(amap.completeness_residual) > bound:
        raise PropertyViolation(
            f"integrated gradients residual {amap.completeness_residual:.3e} exceeds {bound:.3e}"
        )
    return bound


def occlusion_map(model, image, target_class, patch: int, stride: int, fill: float = 0.0,
                  chunk: int = 32) -> AttributionMap:
    """Drop in the target logit when a patch is filled, averaged over the patches covering each pixel."""
    plane = _as_plane(image)
    height, width = plane.shape
    if patch < 1 or patch > min(height, width):
        raise ConfigError(f"occlusion patch {patch} must lie in [1, {min(height, width)}]")
    if stride < 1:
        raise ConfigError(f"occlusion stride must be positive, got {stride}")
    target = target_index(target_class)
    positions = [(r, c) for r in range(0, height - patch + 1, stride) for c in range(0, width - patch + 1, stride)]
    base = target_logits(model, [plane], target)[0]
    sums = np.zeros_like(plane)
    counts = np.zeros_like(plane)
    for start in range(0, len(positions), chunk):
        batch = positions[start:start + chunk]
        occluded = []
        for r, c in batch:
            copy = plane.copy()
            copy[r:r + patch, c:c + patch] = fill
            occluded.append(copy)
        drops = base - target_logits(model, occluded, target)
        for (r, c), drop in zip(batch, drops):
            sums[r:r + patch, c:c + patch] += drop
            counts[r:r + patch, c:c + patch] += 1
    values = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return AttributionMap(
        values=Tensor(values),
        method=Method.OCCLUSION,
        target_class=_target_name(target_class),
        metadata={'patch': patch, 'stride': stride, 'fill': fill, 'f_input': float(base)},
    )


def mass_in_region(values, region) -> float:
    """Share of total |attribution| inside ``region`` (bool mask or (r0, r1, c0, c1) box)."""
    values = np.abs(values.data if isinstance(values, Tensor) else np.asarray(values))
    mask = _region_mask(region, values.shape)
    total = values.sum()
    return float(values[mask].sum() / total) if total > 0 else 0.0


def region_share(region, shape) -> float:
    """Share of pixels inside ``region``; the expected mass of a uniform map."""
    return float(_region_mask(region, shape).mean())


def _region_mask(region, shape) -> np.ndarray:
    if isinstance(region, np.ndarray):
        if region.shape != tuple(shape):
            raise ShapeError(f"region mask {region.shape} does not match map {tuple(shape)}")
        return region.astype(bool)
    r0, r1, c0, c1 = region
    mask = np.zeros(shape, dtype=bool)
    mask[r0:r1, c0:c1] = True
    return mask


def top_k(values, k: int = 10):
    """(row, col, value) of the k largest |values|, largest first."""
    values = values.data if isinstance(values, Tensor) else np.asarray(values)
    order = np.argsort(-np.abs(values), axis=None, kind='stable')[:k]
    rows, cols = np.unravel_index(order, values.shape)
    return [(int(r), int(c), float(values[r, c])) for r, c in zip(rows, cols)]


def rank_correlation(a, b) -> float:
    """Spearman correlation of two maps (ties ranked in scan order)."""
    ranks = [np.argsort(np.argsort(np.ravel(m), kind='stable'), kind='stable').astype(float) for m in (a, b)]
    if ranks[0].std() == 0 or ranks[1].std() == 0:
        return 0.0
    return float(np.corrcoef(ranks[0], ranks[1])[0, 1])
