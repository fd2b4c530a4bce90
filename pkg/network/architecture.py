"""Layer specifications for the full-disk VGG-16 network and its small variants."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from flarecast.exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

NUM_CLASSES = 2
# Logit columns.
FL, NF = 0, 1


@dataclass(frozen=True)
class Conv:
    name: str
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class ReLU:
    name: str


@dataclass(frozen=True)
class MaxPool:
    name: str
    kernel: int = 2
    stride: int = 2


@dataclass(frozen=True)
class AdaptiveAvgPool:
    name: str
    size: Tuple[int, int] = (7, 7)


@dataclass(frozen=True)
class Flatten:
    name: str = 'flatten'


@dataclass(frozen=True)
class Linear:
    name: str
    out_features: int


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layers, the input geometry, and the layer whose output Grad-CAM reads.

    ``tap`` names the layer holding the last convolutional feature maps A^k.
    """

    name: str
    layers: Tuple[object, ...]
    input_shape: Tuple[int, int, int]
    tap: Optional[str] = None
    _shapes: Dict[str, Tuple[int, ...]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"{self.name}: duplicate layer names")
        if self.tap is not None and self.tap not in names:
            raise ConfigError(f"{self.name}: tap layer {self.tap!r} not in spec")
        last = self.layers[-1] if self.layers else None
        if not isinstance(last, Linear) or last.out_features != NUM_CLASSES:
            raise ConfigError(f"{self.name}: final layer must be a fully-connected layer with 2 outputs")
        object.__setattr__(self, '_shapes', dict(self.infer_shapes(*self.input_shape[1:])))

    @property
    def in_channels(self) -> int:
        return self.input_shape[0]

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def infer_shapes(self, height: int, width: int) -> List[Tuple[str, Tuple[int, ...]]]:
        """Per-sample output shape of every layer for a given input size."""
        shape: Tuple[int, ...] = (self.in_channels, height, width)
        shapes = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                channels, h, w = _expect_map(shape, layer)
                out = []
                for size in (h, w):
                    span = size + 2 * layer.padding - layer.kernel
                    if span < 0 or span % layer.stride:
                        raise ShapeError(f"{self.name}.{layer.name}: input {shape} gives no exact output")
                    out.append(span // layer.stride + 1)
                shape = (layer.out_channels, out[0], out[1])
            elif isinstance(layer, MaxPool):
                channels, h, w = _expect_map(shape, layer)
                if h < layer.kernel or w < layer.kernel:
                    raise ShapeError(f"{self.name}.{layer.name}: input {shape} smaller than window")
                shape = (channels, (h - layer.kernel) // layer.stride + 1,
                         (w - layer.kernel) // layer.stride + 1)
            elif isinstance(layer, AdaptiveAvgPool):
                channels, _, _ = _expect_map(shape, layer)
                shape = (channels,) + tuple(layer.size)
            elif isinstance(layer, Flatten):
                shape = (math.prod(shape),)
            elif isinstance(layer, Linear):
                if len(shape) != 1:
                    raise ShapeError(f"{self.name}.{layer.name}: needs flattened input, got {shape}")
                shape = (layer.out_features,)
            elif not isinstance(layer, ReLU):
                raise ConfigError(f"{self.name}: unknown layer {layer!r}")
            shapes.append((layer.name, shape))
        return shapes

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Parameter name -> shape, for the spec's own input geometry."""
        shapes = {}
        previous: Tuple[int, ...] = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Conv):
                shapes[f"{layer.name}.weight"] = (layer.out_channels, previous[0], layer.kernel, layer.kernel)
                shapes[f"{layer.name}.bias"] = (layer.out_channels,)
            elif isinstance(layer, Linear):
                shapes[f"{layer.name}.weight"] = (layer.out_features, previous[0])
                shapes[f"{layer.name}.bias"] = (layer.out_features,)
            previous = self._shapes[layer.name]
        return shapes

    def output_shape(self, layer_name: str) -> Tuple[int, ...]:
        return self._shapes[layer_name]


def _expect_map(shape, layer):
    if len(shape) != 3:
        raise ShapeError(f"{layer.name}: needs a [C,H,W] feature map, got {shape}")
    return shape


def count_parameters(spec: ArchitectureSpec) -> int:
    """Closed-form total: conv K*C*kh*kw + K, fully-connected in*out + out."""
    total = 0
    channels = spec.in_channels
    features = None
    for layer in spec.layers:
        if isinstance(layer, Conv):
            total += layer.out_channels * channels * layer.kernel ** 2 + layer.out_channels
            channels = layer.out_channels
        elif isinstance(layer, AdaptiveAvgPool):
            features = channels * layer.size[0] * layer.size[1]
        elif isinstance(layer, Flatten) and features is None:
            features = math.prod(spec.output_shape(layer.name))
        elif isinstance(layer, Linear):
            total += features * layer.out_features + layer.out_features
            features = layer.out_features
    return total


VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


def _conv_blocks(blocks):
    layers = []
    for b, widths in enumerate(blocks, start=1):
        for i, width in enumerate(widths, start=1):
            layers.append(Conv(f"conv{b}_{i}", width))
            layers.append(ReLU(f"relu{b}_{i}"))
        layers.append(MaxPool(f"pool{b}"))
    return layers


def build_vgg16_fulldisk(input_size: int = 512) -> ArchitectureSpec:
    """13 conv + ReLU, 5 max pools, 7x7 adaptive average pool, fc 25088-4096-4096-2."""
    layers = _conv_blocks(VGG16_BLOCKS)
    layers += [
        AdaptiveAvgPool('avgpool', (7, 7)),
        Flatten('flatten'),
        Linear('fc6', 4096),
        ReLU('relu6'),
        Linear('fc7', 4096),
        ReLU('relu7'),
        Linear('fc8', NUM_CLASSES),
    ]
    return ArchitectureSpec('vgg16', tuple(layers), (3, input_size, input_size), tap='pool5')


def build_tiny(input_size: int = 64, widths=(8, 16)) -> ArchitectureSpec:
    """Two single-conv blocks, 4x4 adaptive pool, one fully-connected layer."""
    layers = _conv_blocks(tuple((w,) for w in widths))
    layers += [
        AdaptiveAvgPool('avgpool', (4, 4)),
        Flatten('flatten'),
        Linear('fc', NUM_CLASSES),
    ]
    return ArchitectureSpec('tiny', tuple(layers), (3, input_size, input_size), tap=f"pool{len(widths)}")


ARCHITECTURES = {
    'vgg16': build_vgg16_fulldisk,
    'tiny': build_tiny,
}


def build_spec(name: str, input_size: Optional[int] = None) -> ArchitectureSpec:
    try:
        builder = ARCHITECTURES[name]
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None
    return builder() if input_size is None else builder(input_size)
