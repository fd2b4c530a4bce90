"""Parameters and forward pass of a built network."""
import logging
import threading
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor
from flarecast.exceptions import ConfigError, ShapeError

from .architecture import (AdaptiveAvgPool, ArchitectureSpec, Conv, Flatten, Linear,
                           MaxPool, ReLU)

logger = logging.getLogger(__name__)

INIT_SCHEMES = ('uniform', 'he_normal')


def channel_duplicate(gray: Tensor, channels: int = 3) -> Tensor:
    """Copy a single-channel batch [N,1,H,W] into ``channels`` identical channels.

    Recorded on the tape, so attributions flow back to the gray image by
    summing over the copies.
    """
    if channels == 1:
        return gray
    return ops.repeat_channels(gray, channels)


def init_params(spec: ArchitectureSpec, scheme: str = 'uniform', seed: int = 0,
                requires_grad: bool = False) -> Dict[str, Tensor]:
    """Draw fresh parameters for ``spec``.

    ``uniform``: weights in [-sqrt(1/fan_in), sqrt(1/fan_in)].
    ``he_normal``: weights ~ N(0, 2/fan_in).
    Biases start at zero. Parameters are drawn in layer order from one seeded
    generator, so equal seeds give identical networks.
    """
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}; choose from {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.parameter_shapes().items():
        if name.endswith('.bias'):
            values = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            if scheme == 'uniform':
                bound = np.sqrt(1.0 / fan_in)
                values = rng.uniform(-bound, bound, size=shape)
            else:
                values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        params[name] = Tensor(values, requires_grad=requires_grad)
    logger.debug("initialized %s with %s scheme, seed %s", spec.name, scheme, seed)
    return params


class Model:
    """An ArchitectureSpec together with its parameter tensors.

    Parameters are never mutated; training produces new Models via
    ``with_parameters``. Activation caches are kept per thread.
    """

    def __init__(self, spec: ArchitectureSpec, params: Mapping[str, Tensor]):
        expected = spec.parameter_shapes()
        missing = sorted(set(expected) - set(params))
        if missing:
            raise ShapeError(f"{spec.name}: missing parameters {', '.join(missing)}")
        extra = sorted(set(params) - set(expected))
        if extra:
            raise ShapeError(f"{spec.name}: unexpected parameters {', '.join(extra)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{spec.name}.{name}: shape {params[name].shape}, expected {shape}")
        self.spec = spec
        self.params = dict(params)
        self._local = threading.local()

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, scheme: str = 'uniform', seed: int = 0,
                   requires_grad: bool = False) -> 'Model':
        return cls(spec, init_params(spec, scheme=scheme, seed=seed, requires_grad=requires_grad))

    def with_parameters(self, params: Mapping[str, Tensor]) -> 'Model':
        return Model(self.spec, params)

    def trainable(self, frozen=()) -> 'Model':
        """Copy whose parameters require grad, except layers listed in ``frozen``."""
        frozen = set(frozen)
        unknown = frozen - {layer.name for layer in self.spec.layers}
        if unknown:
            raise ConfigError(f"cannot freeze unknown layers {sorted(unknown)}")
        params = {
            name: Tensor(t.data, requires_grad=name.split('.')[0] not in frozen)
            for name, t in self.params.items()
        }
        return Model(self.spec, params)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    @property
    def cache(self) -> Dict[str, Tensor]:
        """Activations of this thread's last ``forward(..., cache=True)``."""
        if not hasattr(self._local, 'activations'):
            self._local.activations = {}
        return self._local.activations

    @property
    def tap(self) -> Optional[Tensor]:
        if self.spec.tap is None:
            return None
        return self.cache.get(self.spec.tap)

    def forward(self, batch: Tensor, cache: bool = False) -> Tensor:
        """Logits [N,2] for a batch [N,C,H,W] with C = spec.in_channels."""
        if batch.ndim != 4 or batch.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"{self.spec.name} expects [N,{self.spec.in_channels},H,W], got {batch.shape}"
            )
        activations = {}
        x = batch
        for layer in self.spec.layers:
            x = self._apply(layer, x)
            if cache:
                activations[layer.name] = x
        if cache:
            self._local.activations = activations
        return x

    def forward_gray(self, gray: Tensor, cache: bool = False) -> Tensor:
        """Forward a single-channel batch [N,1,H,W], duplicating it across input channels."""
        if gray.ndim != 4 or gray.shape[1] != 1:
            raise ShapeError(f"expected a gray batch [N,1,H,W], got {gray.shape}")
        return self.forward(channel_duplicate(gray, self.spec.in_channels), cache=cache)

    def probabilities(self, gray: Tensor) -> np.ndarray:
        """Softmax over the two logits; column 0 is the flaring probability."""
        return ops.softmax(self.forward_gray(gray))

    def _apply(self, layer, x: Tensor) -> Tensor:
        if isinstance(layer, Conv):
            return ops.conv2d(x, self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"],
                              stride=layer.stride, padding=layer.padding)
        if isinstance(layer, ReLU):
            return ops.relu(x)
        if isinstance(layer, MaxPool):
            return ops.maxpool2d(x, kernel=layer.kernel, stride=layer.stride)
        if isinstance(layer, AdaptiveAvgPool):
            return ops.adaptive_avg_pool2d(x, output_size=layer.size)
        if isinstance(layer, Flatten):
            return ops.flatten(x)
        if isinstance(layer, Linear):
            return ops.linear(x, self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"])
        raise ConfigError(f"unknown layer {layer!r}")

    def __repr__(self):
        return f"Model({self.spec.name}, {self.parameter_count()} parameters)"
