"""Reverse traversal of a tape."""
import logging
from typing import Optional

import numpy as np

from flarecast.exceptions import ShapeError, TapeError

from .modes import STANDARD, BackwardMode
from .ops import RULES
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


class Gradients(dict):
    """Tensor id -> gradient Tensor. Also indexable by the Tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__contains__(key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.id
        return super().get(key, default)

    def wrt(self, tensor: Tensor) -> np.ndarray:
        """Gradient as an array; zeros if the output does not depend on ``tensor``."""
        found = self.get(tensor)
        return np.zeros(tensor.shape) if found is None else found.data


def backward(tape: Tape, output: Tensor, mode: BackwardMode = STANDARD,
             seed: Optional[np.ndarray] = None) -> Gradients:
    """Propagate from ``output`` back through ``tape``.

    A scalar output is seeded with 1; anything larger needs an explicit
    ``seed`` of the same shape (e.g. a one-hot row selecting a logit).
    Each node is visited once, in reverse recording order.
    """
    if output not in tape:
        raise TapeError(f"{output!r} was not produced on this tape")
    if seed is None:
        if output.size != 1:
            raise TapeError(f"non-scalar output {output.shape} needs an explicit seed gradient")
        seed = np.ones(output.shape)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError(f"seed shape {seed.shape} does not match output {output.shape}")

    grads = {output.id: seed}
    start = tape.position(output)
    for index in range(start, -1, -1):
        node = tape.nodes[index]
        grad = grads.get(node.output)
        if grad is None:
            continue
        needs = tuple(tape.needs_grad(i) for i in node.inputs)
        if not any(needs):
            continue
        ref = mode.reference_node(index, node)
        input_grads = RULES[node.op](node, grad, mode, ref, needs)
        for tensor_id, need, input_grad in zip(node.inputs, needs, input_grads):
            if not need or input_grad is None:
                continue
            if tensor_id in grads:
                grads[tensor_id] = grads[tensor_id] + input_grad
            else:
                grads[tensor_id] = input_grad
    logger.debug("backward over %d nodes in %s mode", start + 1, mode.name)
    return Gradients({tensor_id: Tensor(grad) for tensor_id, grad in grads.items()})
