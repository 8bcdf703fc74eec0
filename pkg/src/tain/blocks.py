"""Convolutional building blocks: conv layers, channel attention, residual groups.

All modules hold their parameters as :class:`~tain.autograd.Tensor` leaves
with ``requires_grad=True`` and expose them through ``named_params()`` as
``(dotted.name, tensor)`` pairs.  Construction zero-fills every parameter;
the model owns initialization so values depend only on a seed and the
parameter's full name, never on construction order.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


def _param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class Conv2d:
    """Stride-1 convolution with odd kernel, weight (k, k, cin, cout)."""

    def __init__(self, k: int, cin: int, cout: int, padding: int = 0):
        self.weight = _param((k, k, cin, cout))
        self.bias = _param((cout,))
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, padding=self.padding)

    def named_params(self):
        yield "weight", self.weight
        yield "bias", self.bias


class ChannelAttention:
    """Squeeze-and-gate over channels.

    Pools the map to one vector, squeezes through a bottleneck of
    ``channels / reduction`` units (no biases), and rescales every channel
    of the input by the resulting sigmoid gate.
    """

    def __init__(self, channels: int, reduction: int):
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(
                f"channel attention: reduction {reduction} must divide channels {channels}"
            )
        mid = channels // reduction
        self.w_down = _param((channels, mid))
        self.w_up = _param((mid, channels))

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        pooled = ag.reshape(ag.global_avg_pool(x), (1, c))
        gate = ag.sigmoid(ag.matmul(ag.relu(ag.matmul(pooled, self.w_down)), self.w_up))
        gate = ag.broadcast_to(ag.reshape(gate, (1, 1, c)), (h, w, c))
        return ag.mul(x, gate)

    def named_params(self):
        yield "w_down", self.w_down
        yield "w_up", self.w_up


class ResBlock:
    """conv3x3 -> relu -> conv3x3 with a skip from the block input."""

    def __init__(self, channels: int):
        self.conv1 = Conv2d(3, channels, channels, padding=1)
        self.conv2 = Conv2d(3, channels, channels, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(x, self.conv2(ag.relu(self.conv1(x))))

    def named_params(self):
        for name, p in self.conv1.named_params():
            yield f"conv1.{name}", p
        for name, p in self.conv2.named_params():
            yield f"conv2.{name}", p


class ResGroup:
    """A run of residual blocks closed by channel attention.

    Deliberately no skip wrapping the group as a whole: the trunk is
    reshaped between groups by the attention stages, so a wrap-around
    sum would mix pre- and post-attention feature spaces.
    """

    def __init__(self, channels: int, n_blocks: int, reduction: int):
        if n_blocks < 1:
            raise ConfigError(f"res group needs at least one block, got {n_blocks}")
        self.blocks = [ResBlock(channels) for _ in range(n_blocks)]
        self.ca = ChannelAttention(channels, reduction)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.ca(x)

    def named_params(self):
        for i, block in enumerate(self.blocks):
            for name, p in block.named_params():
                yield f"blocks.{i}.{name}", p
        for name, p in self.ca.named_params():
            yield f"ca.{name}", p
