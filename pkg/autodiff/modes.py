"""Backward modes.

Guided and Rescale only change how gradients cross nonlinearity nodes
(``relu``, and for Rescale also ``maxpool2d``); every linear node propagates
the same way in all three modes.
"""
from flarecast.exceptions import TapeError

# Below this |x - x_ref| the rescale multiplier falls back to the ordinary gradient.
RESCALE_DELTA = 1e-7


class BackwardMode:
    name = 'standard'

    def reference_node(self, index, node):
        return None

    def __repr__(self):
        return f"{type(self).__name__}()"


class Standard(BackwardMode):
    """Exact reverse-mode gradients."""


class Guided(BackwardMode):
    """At ReLU nodes pass only positive gradient through positive inputs."""

    name = 'guided'


class Rescale(BackwardMode):
    """DeepLIFT rescale multipliers against a reference forward pass.

    ``reference`` is the tape of the same network evaluated on the reference
    input; nodes are paired by position, so both tapes must come from the same
    forward code.
    """

    name = 'rescale'

    def __init__(self, reference, delta: float = RESCALE_DELTA):
        self.reference = reference
        self.delta = delta

    def reference_node(self, index, node):
        try:
            ref = self.reference.nodes[index]
        except IndexError:
            raise TapeError(f"reference tape has no node {index} ({node.op})") from None
        if ref.op != node.op or ref.input_shapes != node.input_shapes:
            raise TapeError(
                f"reference tape diverges at node {index}: {ref.op}{ref.input_shapes} "
                f"vs {node.op}{node.input_shapes}"
            )
        return ref

    def __repr__(self):
        return f"Rescale(nodes={len(self.reference)}, delta={self.delta})"


STANDARD = Standard()
GUIDED = Guided()
