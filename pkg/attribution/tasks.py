import logging

from celery import shared_task

from network.architecture import build_spec
from pipeline.datasets import load_image

from .methods import BaselineSet
from .services import OCCLUSION_PATCH, OCCLUSION_STRIDE, explain_file, parse_methods

logger = logging.getLogger(__name__)


@shared_task(bind=True)
def explain_image(self, weights, architecture, image, out_dir, methods, target_class='FL',
                  input_size=None, backgrounds=(), ig_steps=256, threshold=0.5,
                  occlusion_patch=OCCLUSION_PATCH, occlusion_stride=OCCLUSION_STRIDE):
    """Explain one image with a saved network; returns the property log path.

    ``backgrounds`` are image paths; the zero image is always added to them.
    """
    logger.info("task %s: explaining %s", self.request.id, image)
    baselines = None
    if backgrounds:
        size = build_spec(architecture, input_size).input_shape[-1]
        baselines = BaselineSet.provided([load_image(p, size) for p in backgrounds], include_zero=True)
    log_path, _ = explain_file(weights, architecture, image, out_dir, parse_methods(methods),
                               target_class=target_class, input_size=input_size,
                               backgrounds=baselines, ig_steps=ig_steps, threshold=threshold,
                               occlusion_patch=occlusion_patch, occlusion_stride=occlusion_stride)
    return str(log_path)
