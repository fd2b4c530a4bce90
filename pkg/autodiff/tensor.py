"""Immutable dense tensors and the tape that records operations on them."""
import contextvars
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Tuple

import numpy as np

from flarecast.exceptions import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

_tensor_ids = itertools.count(1)
_active_tape: contextvars.ContextVar[Optional['Tape']] = contextvars.ContextVar('active_tape', default=None)


class Tensor:
    """Row-major real array with a stable id.

    The wrapped array is read-only; every operation returns a new Tensor.
    64-bit by default; 32-bit is only used for stored weights.
    """

    __slots__ = ('data', 'requires_grad', 'id')

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        array = np.array(data, dtype=dtype)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"tensor of shape {array.shape} contains NaN or Inf")
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {array.shape}")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.id = next(_tensor_ids)

    @classmethod
    def zeros(cls, shape, requires_grad=False):
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False):
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # Arithmetic goes through the recorded ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.take(self, index)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass(frozen=True)
class Node:
    """One recorded operation: what ran, on which tensors, and what backward needs."""

    op: str
    inputs: Tuple[int, ...]
    output: int
    input_shapes: Tuple[Tuple[int, ...], ...]
    saved: Mapping[str, Any] = field(default_factory=dict)


class Tape:
    """Ordered record of the operations of one forward pass.

    Used as a context manager; ops executed inside the ``with`` block are
    appended in execution order, which is a topological order by
    construction. Tapes are per-context, so threads each get their own.
    """

    def __init__(self):
        self.nodes = []
        self._outputs = {}
        self._needs_grad = set()
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, tensor) -> bool:
        tensor_id = tensor.id if isinstance(tensor, Tensor) else tensor
        return tensor_id in self._outputs

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, /, **saved) -> Node:
        node = Node(
            op=op,
            inputs=tuple(t.id for t in inputs),
            output=output.id,
            input_shapes=tuple(t.shape for t in inputs),
            saved=saved,
        )
        self.nodes.append(node)
        self._outputs[output.id] = len(self.nodes) - 1
        for tensor in inputs:
            if tensor.requires_grad:
                self._needs_grad.add(tensor.id)
        if any(t.id in self._needs_grad for t in inputs):
            self._needs_grad.add(output.id)
        return node

    def position(self, tensor: Tensor) -> int:
        """Index of the node that produced ``tensor``."""
        return self._outputs[tensor.id]

    def needs_grad(self, tensor_id: int) -> bool:
        return tensor_id in self._needs_grad

    def op_kinds(self) -> Tuple[str, ...]:
        return tuple(node.op for node in self.nodes)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, **saved) -> Tensor:
    """Wrap ``out_data`` as a Tensor and append the op to the active tape, if any."""
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None:
        tape.record(op, inputs, out, **saved)
    return out
