from .backward import Gradients, backward
from .modes import GUIDED, STANDARD, Guided, Rescale, Standard
from .tensor import Tape, Tensor

__all__ = (
    'Tensor', 'Tape', 'backward', 'Gradients',
    'Standard', 'Guided', 'Rescale', 'STANDARD', 'GUIDED',
)
