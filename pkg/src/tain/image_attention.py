"""Spatial weighting of the two attended frame features.

Both similarity results plus their confidence maps are stacked and run
through a two-layer pointwise network whose two output channels are
softmaxed against each other, giving per-pixel weights a0, a1 that sum
to one exactly.  Occluded regions in one frame then lean on the other:
where d0_max is weak relative to d1_max the network can shift mass to
the frame that actually saw the content.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError


@dataclasses.dataclass
class IAParams:
    """Pointwise two-layer scoring network, biasless.

    w1: (2*(d+1), c_mid) mixing both feature stacks and both confidence
    maps; w2: (c_mid, 2), one logit per frame.
    """

    w1: Tensor
    w2: Tensor

    @classmethod
    def create(cls, d: int, c_mid: int | None = None) -> "IAParams":
        if c_mid is None:
            c_mid = d
        return cls(
            w1=Tensor(np.zeros((2 * (d + 1), c_mid), dtype=np.float32), requires_grad=True),
            w2=Tensor(np.zeros((c_mid, 2), dtype=np.float32), requires_grad=True),
        )

    def named_params(self):
        yield "w1", self.w1
        yield "w2", self.w2


@dataclasses.dataclass
class IAWeights:
    """Per-pixel frame weights, each (h, w, 1), summing to one."""

    a0: Tensor
    a1: Tensor


def ia_forward(s0: Tensor, s1: Tensor, d0_max: Tensor, d1_max: Tensor, params: IAParams) -> IAWeights:
    if s0.data.shape != s1.data.shape or s0.data.ndim != 3:
        raise ShapeError(
            f"attended maps disagree: {tuple(s0.shape)} vs {tuple(s1.shape)}"
        )
    h, w, d = s0.data.shape
    for name, t in (("d0_max", d0_max), ("d1_max", d1_max)):
        if t.data.shape != (h, w, 1):
            raise ShapeError(f"{name} must be ({h}, {w}, 1), got {tuple(t.shape)}")
    c_in = 2 * (d + 1)
    if params.w1.data.shape[0] != c_in:
        raise ShapeError(
            f"w1 expects {params.w1.data.shape[0]} input channels, stack has {c_in}"
        )

    stack = ag.concat([s0, s1, d0_max, d1_max], axis=2)
    rows = ag.reshape(stack, (h * w, c_in))
    logits = ag.matmul(ag.relu(ag.matmul(rows, params.w1)), params.w2)
    weights = ag.softmax(logits, axis=1)  # rows sum to one by construction
    weights = ag.reshape(weights, (h, w, 2))
    return IAWeights(
        a0=ag.slice_axis(weights, 2, 0, 1),
        a1=ag.slice_axis(weights, 2, 1, 2),
    )
