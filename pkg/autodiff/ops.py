"""Differentiable operations and their backward rules.

Only what the flare network and its training/attribution need. Each forward
function computes with numpy in float64 and records itself on the active
tape; the matching rule registered in ``RULES`` maps the upstream gradient
to one gradient per input (``None`` for inputs that need none).
"""
import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from flarecast.exceptions import DataError, ShapeError

from .modes import Guided, Rescale
from .tensor import Tensor, record

logger = logging.getLogger(__name__)

RULES = {}


def backward_rule(op):
    def register(fn):
        RULES[op] = fn
        return fn
    return register


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise and structural

def add(a: Tensor, b: Tensor) -> Tensor:
    return record('add', (a, b), a.data + b.data)


@backward_rule('add')
def _add_backward(node, grad, mode, ref, needs):
    return tuple(_unbroadcast(grad, shape) if need else None
                 for shape, need in zip(node.input_shapes, needs))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return record('sub', (a, b), a.data - b.data)


@backward_rule('sub')
def _sub_backward(node, grad, mode, ref, needs):
    ga = _unbroadcast(grad, node.input_shapes[0]) if needs[0] else None
    gb = -_unbroadcast(grad, node.input_shapes[1]) if needs[1] else None
    return ga, gb


def mul(a: Tensor, b: Tensor) -> Tensor:
    return record('mul', (a, b), a.data * b.data, a=a.data, b=b.data)


@backward_rule('mul')
def _mul_backward(node, grad, mode, ref, needs):
    a, b = node.saved['a'], node.saved['b']
    if isinstance(mode, Rescale):
        # Product is bilinear: split its delta symmetrically (Shapley over the two factors).
        a_ref, b_ref = ref.saved["a"], ref.saved["b"]
        mult_a = (b + b_ref) / 2.0
        mult_b = (a + a_ref) / 2.0
        return (_unbroadcast(grad * mult_a, node.input_shapes[0]) if needs[0] else None,
                _unbroadcast(grad * mult_b, node.input_shapes[1]) if needs[1] else None)
    return (_unbroadcast(grad * b, node.input_shapes[0]) if needs[0] else None,
            _unbroadcast(grad * a, node.input_shapes[1]) if needs[1] else None)


def scale(a: Tensor, factor: float) -> Tensor:
    return record('scale', (a,), a.data * factor, factor=factor)


@backward_rule('scale')
def _scale_backward(node, grad, mode, ref, needs):
    return (grad * node.saved['factor'],)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    return record('sum', (a,), np.array(a.data.sum()))


@backward_rule('sum')
def _sum_backward(node, grad, mode, ref, needs):
    return (np.broadcast_to(grad, node.input_shapes[0]).copy(),)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return record('reshape', (a,), out)


@backward_rule('reshape')
def _reshape_backward(node, grad, mode, ref, needs):
    return (grad.reshape(node.input_shapes[0]),)


def flatten(a: Tensor) -> Tensor:
    """Collapse everything after the batch axis."""
    return reshape(a, (a.shape[0], -1))


def take(a: Tensor, index) -> Tensor:
    return record('take', (a,), np.asarray(a.data[index]), index=index)


@backward_rule('take')
def _take_backward(node, grad, mode, ref, needs):
    out = np.zeros(node.input_shapes[0])
    np.add.at(out, node.saved['index'], grad)
    return (out,)


def repeat_channels(a: Tensor, copies: int) -> Tensor:
    """Tile a single-channel batch [N,1,H,W] into [N,copies,H,W]."""
    if a.ndim != 4 or a.shape[1] != 1:
        raise ShapeError(f"repeat_channels expects [N,1,H,W], got {a.shape}")
    return record('repeat_channels', (a,), np.repeat(a.data, copies, axis=1))


@backward_rule('repeat_channels')
def _repeat_channels_backward(node, grad, mode, ref, needs):
    return (grad.sum(axis=1, keepdims=True),)


# Network layers

def _conv_out(size, kernel, stride, padding, axis):
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} larger than padded {axis} {size + 2 * padding}")
    if span % stride:
        raise ShapeError(f"{axis} {size} with kernel {kernel}, stride {stride}, "
                         f"padding {padding} gives a non-exact output size")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation, [N,C,H,W] * [K,C,kh,kw] -> [N,K,H',W']."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, channels, height, width = x.shape
    kernels, weight_channels, kh, kw = weight.shape
    if weight_channels != channels:
        raise ShapeError(f"conv2d input has {channels} channels, weight expects {weight_channels}")
    if bias.shape != (kernels,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {kernels} kernels")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be positive, got {stride}")
    out_h = _conv_out(height, kh, stride, padding, 'height')
    out_w = _conv_out(width, kw, stride, padding, 'width')

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: [N, C, H', W', kh, kw]
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    return record('conv2d', (x, weight, bias), np.ascontiguousarray(out),
                  padded=padded, weight=weight.data, stride=stride, padding=padding,
                  out_hw=(out_h, out_w))


@backward_rule('conv2d')
def _conv2d_backward(node, grad, mode, ref, needs):
    padded = node.saved['padded']
    weight = node.saved['weight']
    stride, padding = node.saved['stride'], node.saved['padding']
    out_h, out_w = node.saved['out_hw']
    _, _, kh, kw = weight.shape

    grad_x = grad_w = grad_b = None
    if needs[0]:
        grad_padded = np.zeros(padded.shape)
        for i in range(kh):
            for j in range(kw):
                # [N, H', W', C]
                part = np.tensordot(grad, weight[:, :, i, j], axes=([1], [0]))
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    part.transpose(0, 3, 1, 2)
        height, width = padded.shape[2] - 2 * padding, padded.shape[3] - 2 * padding
        grad_x = grad_padded[:, :, padding:padding + height, padding:padding + width]
    if needs[1]:
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
    if needs[2]:
        grad_b = grad.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def relu(x: Tensor) -> Tensor:
    return record('relu', (x,), np.maximum(x.data, 0.0), input=x.data)


@backward_rule('relu')
def _relu_backward(node, grad, mode, ref, needs):
    x = node.saved['input']
    if isinstance(mode, Guided):
        return (grad * (x > 0) * (grad > 0),)
    if isinstance(mode, Rescale):
        x_ref = ref.saved['input']
        delta_in = x - x_ref
        delta_out = np.maximum(x, 0.0) - np.maximum(x_ref, 0.0)
        wide = np.abs(delta_in) > mode.delta
        multiplier = np.where(wide, delta_out / np.where(wide, delta_in, 1.0), (x > 0).astype(float))
        return (grad * multiplier,)
    return (grad * (x > 0),)


def _pool_windows(data, kernel, stride):
    n, channels, height, width = data.shape
    windows = sliding_window_view(data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    return windows.reshape(n, channels, out_h, out_w, kernel * kernel)


def _scatter_to_windows(values, argmax, input_shape, kernel, stride):
    """Add ``values[n,c,i,j]`` at the input pixel picked by ``argmax[n,c,i,j]``."""
    n, channels, out_h, out_w = values.shape
    out = np.zeros(input_shape)
    rows = np.arange(out_h)[:, None] * stride + argmax // kernel
    cols = np.arange(out_w)[None, :] * stride + argmax % kernel
    batch = np.arange(n)[:, None, None, None]
    chans = np.arange(channels)[None, :, None, None]
    np.add.at(out, (batch, chans, rows, cols), values)
    return out


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Max pooling, floor mode.

    Ties go to the first maximum in row-major scan order inside the window.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects [N,C,H,W], got {x.shape}")
    if x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeError(f"maxpool2d window {kernel} larger than input {x.shape[2:]}")
    flat = _pool_windows(x.data, kernel, stride)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return record('maxpool2d', (x,), out, input=x.data, argmax=argmax, output=out,
                  kernel=kernel, stride=stride)


@backward_rule('maxpool2d')
def _maxpool2d_backward(node, grad, mode, ref, needs):
    kernel, stride = node.saved['kernel'], node.saved['stride']
    shape = node.input_shapes[0]
    routed = _scatter_to_windows(grad, node.saved['argmax'], shape, kernel, stride)
    if not isinstance(mode, Rescale):
        return (routed,)

    # Each window is a nonlinearity: split its output delta between the
    # input's and the reference's winning pixels, then rescale by the input delta.
    out, out_ref = node.saved['output'], ref.saved['output']
    cross = np.maximum(out, out_ref)
    contribution = (
        _scatter_to_windows(grad * (cross - out_ref), node.saved['argmax'], shape, kernel, stride)
        + _scatter_to_windows(grad * (out - cross), ref.saved['argmax'], shape, kernel, stride)
    )
    delta_in = node.saved['input'] - ref.saved['input']
    wide = np.abs(delta_in) > mode.delta
    return (np.where(wide, contribution / np.where(wide, delta_in, 1.0), routed),)


def _adaptive_bounds(size, cells):
    return [(math.floor(i * size / cells), math.ceil((i + 1) * size / cells)) for i in range(cells)]


def adaptive_avg_pool2d(x: Tensor, output_size=(7, 7)) -> Tensor:
    """Average over cells [floor(i*H/h), ceil((i+1)*H/h)) x the same for columns."""
    if x.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d expects [N,C,H,W], got {x.shape}")
    out_h, out_w = output_size
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"adaptive_avg_pool2d output size must be positive, got {output_size}")
    rows = _adaptive_bounds(x.shape[2], out_h)
    cols = _adaptive_bounds(x.shape[3], out_w)
    out = np.empty(x.shape[:2] + (out_h, out_w))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return record('adaptive_avg_pool2d', (x,), out, rows=rows, cols=cols)


@backward_rule('adaptive_avg_pool2d')
def _adaptive_avg_pool2d_backward(node, grad, mode, ref, needs):
    out = np.zeros(node.input_shapes[0])
    for i, (r0, r1) in enumerate(node.saved['rows']):
        for j, (c0, c1) in enumerate(node.saved['cols']):
            area = (r1 - r0) * (c1 - c0)
            out[:, :, r0:r1, c0:c1] += grad[:, :, i, j][:, :, None, None] / area
    return (out,)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[N,in] x [out,in]^T + [out]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear cannot apply weight {weight.shape} to input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    out = x.data @ weight.data.T + bias.data
    return record('linear', (x, weight, bias), out, input=x.data, weight=weight.data)


@backward_rule('linear')
def _linear_backward(node, grad, mode, ref, needs):
    x, weight = node.saved['input'], node.saved['weight']
    return (grad @ weight if needs[0] else None,
            grad.T @ x if needs[1] else None,
            grad.sum(axis=0) if needs[2] else None)


def log_softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError(f"log_softmax expects [N,classes], got {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return record('log_softmax', (logits,), out, output=out)


@backward_rule('log_softmax')
def _log_softmax_backward(node, grad, mode, ref, needs):
    probs = np.exp(node.saved['output'])
    return (grad - probs * grad.sum(axis=1, keepdims=True),)


def nll_loss(log_probs: Tensor, targets, class_weights: Tensor) -> Tensor:
    """Weighted mean of -log_probs[n, t_n], normalized by the applied weights."""
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise ShapeError(f"nll_loss needs one target per row of {log_probs.shape}, got {targets.shape}")
    classes = log_probs.shape[1]
    if class_weights.shape != (classes,):
        raise ShapeError(f"nll_loss class_weights shape {class_weights.shape} != ({classes},)")
    if np.any(class_weights.data <= 0):
        raise DataError("nll_loss class weights must be positive")
    if np.any((targets < 0) | (targets >= classes)):
        raise DataError(f"nll_loss target out of range [0, {classes})")
    weights = class_weights.data[targets]
    picked = log_probs.data[np.arange(len(targets)), targets]
    loss = -(weights * picked).sum() / weights.sum()
    return record('nll_loss', (log_probs,), np.array(loss), targets=targets, weights=weights)


@backward_rule('nll_loss')
def _nll_loss_backward(node, grad, mode, ref, needs):
    targets, weights = node.saved['targets'], node.saved['weights']
    out = np.zeros(node.input_shapes[0])
    out[np.arange(len(targets)), targets] = -weights / weights.sum()
    return (out * grad,)


def softmax(logits) -> np.ndarray:
    """Plain (unrecorded) row softmax for reporting probabilities."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    shifted = data - data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)
