"""Central finite-difference checks for recorded ops."""
import numpy as np

from flarecast.exceptions import PropertyViolation

from .backward import backward
from .tensor import Tape, Tensor

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


def numerical_gradient(fn, inputs, wrt: int, step: float = FD_STEP) -> np.ndarray:
    """d fn(*inputs).sum() / d inputs[wrt] by central differences."""
    base = [t.numpy() for t in inputs]
    grad = np.zeros_like(base[wrt])
    flat = grad.reshape(-1)
    for k in range(flat.size):
        values = []
        for sign in (1.0, -1.0):
            shifted = [b.copy() for b in base]
            shifted[wrt].reshape(-1)[k] += sign * step
            values.append(fn(*[Tensor(s) for s in shifted]).data.sum())
        flat[k] = (values[0] - values[1]) / (2.0 * step)
    return grad


def analytic_gradients(fn, inputs):
    """Standard-mode gradient of fn(*inputs).sum() for every input."""
    inputs = [Tensor(t.data, requires_grad=True) for t in inputs]
    with Tape() as tape:
        out = fn(*inputs)
        total = out.sum() if out.size != 1 else out
    grads = backward(tape, total)
    return [grads.wrt(t) for t in inputs]


def max_relative_error(analytic, numeric) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(fn, inputs, tolerance: float = FD_TOLERANCE, step: float = FD_STEP):
    """Return per-input max relative errors; raise if any exceeds ``tolerance``."""
    analytic = analytic_gradients(fn, inputs)
    errors = []
    for index in range(len(inputs)):
        numeric = numerical_gradient(fn, inputs, index, step=step)
        errors.append(max_relative_error(analytic[index], numeric))
    worst = max(errors)
    if worst >= tolerance:
        raise PropertyViolation(f"gradient check failed: max relative error {worst:.3e} >= {tolerance}")
    return errors
