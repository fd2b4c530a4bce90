"""Run a set of attribution methods on one image and write the results."""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from autodiff.tensor import Tensor
from evaluation.scores import predicted_label
from flarecast.exceptions import ConfigError
from network.architecture import build_spec
from network.weights import load_weights
from pipeline.datasets import load_image

from .methods import (IG_STEPS, SUMMATION_TOLERANCE, AttributionMap, BaselineSet, Method,
                      check_summation_to_delta, completeness_bound, deep_shap, grad_cam_map,
                      guided_backprop_map, guided_grad_cam, integrated_gradients, mass_in_region,
                      occlusion_map, region_share, summation_errors, target_logits, top_k)
from .overlay import save_overlay

logger = logging.getLogger(__name__)

DEFAULT_METHODS = (Method.GUIDED_GRAD_CAM, Method.INTEGRATED_GRADIENTS, Method.DEEP_SHAP)
OCCLUSION_PATCH = 32
OCCLUSION_STRIDE = 16
SALIENCY = {
    Method.GRAD_CAM: grad_cam_map,
    Method.GUIDED_BACKPROP: guided_backprop_map,
    Method.GUIDED_GRAD_CAM: guided_grad_cam,
}


def parse_methods(names: Iterable[str]):
    try:
        return tuple(Method(name) for name in names)
    except ValueError as exc:
        choices = ', '.join(m.value for m in Method)
        raise ConfigError(f"{exc}; choose from {choices}") from None


def explain(model, image: np.ndarray, target_class: str = 'FL', methods=DEFAULT_METHODS,
            backgrounds: Optional[BaselineSet] = None, ig_steps: int = IG_STEPS,
            occlusion_patch: int = OCCLUSION_PATCH, occlusion_stride: int = OCCLUSION_STRIDE,
            audit: bool = True) -> Dict[Method, AttributionMap]:
    """Attribution maps keyed by method.

    Deep SHAP needs ``backgrounds``; when ``audit`` is set its
    summation-to-delta property is checked and a violation raises.
    """
    maps = {}
    for method in methods:
        if method is Method.DEEP_SHAP:
            if backgrounds is None:
                raise ConfigError("Deep SHAP needs background images")
            amap = deep_shap(model, image, target_class, backgrounds)
            if audit:
                check_summation_to_delta(amap)
        elif method is Method.INTEGRATED_GRADIENTS:
            amap = integrated_gradients(model, image, target_class, steps=ig_steps)
        elif method is Method.OCCLUSION:
            amap = occlusion_map(model, image, target_class, occlusion_patch, occlusion_stride)
        else:
            amap = SALIENCY[method](model, image, target_class)
        logger.info("%s for %s: residual %s", method.value, amap.target_class, amap.completeness_residual)
        maps[method] = amap
    return maps


def write_maps(maps: Dict[Method, AttributionMap], out_dir, stem: str,
               background: Optional[np.ndarray] = None):
    """Raster, sidecar and overlay PNG per map; returns the raster paths."""
    out_dir = Path(out_dir)
    paths = []
    for method, amap in maps.items():
        base = out_dir / f"{stem}_{method.value}_{amap.target_class}"
        paths.append(amap.save(base.with_suffix('.raster')))
        save_overlay(amap.values, base.with_suffix('.png'), background=background)
    return paths


def property_log(model, image: np.ndarray, maps: Dict[Method, AttributionMap], threshold: float = 0.5,
                 region=None, k: int = 10):
    """What the explain command records next to the rasters."""
    probability = float(model.probabilities(Tensor(image[None, None]))[0, 0])
    log = {
        'fl_probability': probability,
        'predicted_label': predicted_label(probability, threshold),
        'maps': {},
    }
    for method, amap in maps.items():
        entry = {
            'target_class': amap.target_class,
            'completeness_residual': amap.completeness_residual,
            'top_k': top_k(amap.values, k),
        }
        for key in ('f_input', 'f_baseline', 'baseline', 'steps', 'backgrounds'):
            if key in amap.metadata:
                entry[key] = amap.metadata[key]
        if method not in (Method.INTEGRATED_GRADIENTS, Method.DEEP_SHAP):
            fill = float(amap.metadata.get('fill', 0.0))
            f_x, f_fill = target_logits(model, [image, np.full_like(image, fill)], amap.target_class)
            entry.update(f_input=float(f_x), f_baseline=float(f_fill),
                         baseline='zero' if fill == 0 else f"fill {fill}")
        if method is Method.OCCLUSION:
            entry.update(patch=amap.metadata['patch'], stride=amap.metadata['stride'])
        if method is Method.DEEP_SHAP:
            errors = summation_errors(amap)
            entry['summation_errors'] = [float(e) for e in errors]
            entry['summation_to_delta'] = 'pass' if errors.max() <= SUMMATION_TOLERANCE else 'fail'
        elif method is Method.INTEGRATED_GRADIENTS:
            ok = abs(amap.completeness_residual) <= completeness_bound(amap)
            entry['completeness'] = 'pass' if ok else 'fail'
        if region is not None:
            entry['mass_in_region'] = mass_in_region(amap.values, region)
            entry['region_share'] = region_share(region, amap.shape)
        log['maps'][method.value] = entry
    return log


def explain_file(weights, architecture: str, image, out_dir, methods=DEFAULT_METHODS, target_class: str = 'FL',
                 input_size=None, backgrounds: Optional[BaselineSet] = None, ig_steps: int = IG_STEPS,
                 threshold: float = 0.5, region=None, audit: bool = True,
                 occlusion_patch: int = OCCLUSION_PATCH, occlusion_stride: int = OCCLUSION_STRIDE):
    """Load a saved network and an image, explain it, and write rasters, overlays and the property log."""
    spec = build_spec(architecture, input_size)
    model = load_weights(spec, weights)
    size = spec.input_shape[-1]
    plane = load_image(image, size)
    maps = explain(model, plane, target_class, methods, backgrounds=backgrounds, ig_steps=ig_steps,
                   occlusion_patch=occlusion_patch, occlusion_stride=occlusion_stride, audit=audit)
    stem = Path(image).stem
    paths = write_maps(maps, out_dir, stem, background=plane)
    log = property_log(model, plane, maps, threshold=threshold, region=region)
    log['image'] = str(image)
    log['rasters'] = [str(p) for p in paths]
    log_path = Path(out_dir) / f"{stem}_{_target(target_class)}_properties.json"
    log_path.write_text(json.dumps(log, indent=2), encoding='utf-8')
    return log_path, log


def _target(target_class) -> str:
    return 'FL' if target_class in ('FL', 0) else 'NF'
