"""The interpolation network: shuffle-down encoder, attentive trunk, shuffle-up tail.

Both input frames are pixel-unshuffled by the scale factor so all heavy
work runs on an s-times coarser grid.  A trunk of residual groups refines
a joint feature map; between groups, cross-similarity stages let the
trunk retrieve matching content from either frame and a pointwise
attention picks, per pixel, how much to trust each frame.  A tail conv
plus pixel shuffle brings the result back to full resolution.

Every parameter is initialized from the model seed and the parameter's
own dotted name, so two models that share a sub-structure share those
values exactly no matter what else differs between their configs.
"""

from __future__ import annotations

import dataclasses
import zlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .blocks import Conv2d, ResGroup
from .cross_similarity import CSParams, SimilarityResult, cs_pair
from .errors import ConfigError, ShapeError
from .image_attention import IAParams, IAWeights, ia_forward


@dataclasses.dataclass
class ModelConfig:
    scale: int = 8
    channels: int = 192
    n_groups: int = 5
    n_blocks: int = 2
    reduction: int = 16
    enable_cs: bool = True
    normalize_qk: bool = True
    seed: int = 0

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Small configuration for fast experiments and the test suite."""
        base = dict(scale=2, channels=16, n_groups=2, n_blocks=2, reduction=4)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.n_groups < 1:
            raise ConfigError(f"n_groups must be >= 1, got {self.n_groups}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.reduction < 1 or self.channels % self.reduction != 0:
            raise ConfigError(
                f"reduction {self.reduction} must divide channels {self.channels}"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclasses.dataclass
class ForwardTrace:
    """Everything one forward pass produced, for inspection and decoding."""

    prediction: Tensor
    trunk: list  # feature map after each residual group + attention stage
    cs_results: list  # (SimilarityResult, SimilarityResult) per stage
    ia_weights: list  # IAWeights per stage


def _seeded_uniform(seed: int, name: str, shape, bound: float) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    return rng.uniform(-bound, bound, size=shape)


class TainModel:
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        s, d = config.scale, config.channels
        in_ch = 3 * s * s

        self.head = Conv2d(3, 2 * in_ch, d, padding=1)
        self.frame_enc = Conv2d(3, in_ch, d, padding=1)  # shared by both frames
        self.groups = [
            ResGroup(d, config.n_blocks, config.reduction) for _ in range(config.n_groups)
        ]
        n_stages = config.n_groups - 1 if config.enable_cs else 0
        self.cs = [CSParams.create(d) for _ in range(n_stages)]
        self.ia = [IAParams.create(d) for _ in range(n_stages)]
        self.fusion = [Conv2d(3, 3 * d, d, padding=1) for _ in range(n_stages)]
        self.tail = Conv2d(3, d, in_ch, padding=1)

        self._init_params()

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        for name, p in self.head.named_params():
            yield f"head.{name}", p
        for name, p in self.frame_enc.named_params():
            yield f"frame_enc.{name}", p
        for i, group in enumerate(self.groups):
            for name, p in group.named_params():
                yield f"groups.{i}.{name}", p
        for i, cs in enumerate(self.cs):
            for name, p in cs.named_params():
                yield f"cs.{i}.{name}", p
        for i, ia in enumerate(self.ia):
            for name, p in ia.named_params():
                yield f"ia.{i}.{name}", p
        for i, conv in enumerate(self.fusion):
            for name, p in conv.named_params():
                yield f"fusion.{i}.{name}", p
        for name, p in self.tail.named_params():
            yield f"tail.{name}", p

    def params(self):
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(np.sum([p.data.size for p in self.params()]))

    def _init_params(self) -> None:
        d = self.config.channels
        for name, p in self.named_params():
            shape = p.data.shape
            if name.endswith(".bias") or name.endswith(".alpha"):
                continue  # constructed as zeros, stays zero
            if name.startswith("fusion.") and name.endswith(".weight"):
                # passthrough start: copy the trunk slice of the concat and
                # ignore the attended maps until training says otherwise
                w = np.zeros(shape, dtype=p.data.dtype)
                for c in range(d):
                    w[1, 1, c, c] = 1.0
                p.data = w
                continue
            if p.data.ndim == 4:
                fan_in = shape[0] * shape[1] * shape[2]
            elif p.data.ndim == 2:
                fan_in = shape[0]
            else:
                raise ConfigError(f"no init rule for parameter {name} of shape {shape}")
            bound = 1.0 / np.sqrt(fan_in)
            p.data = _seeded_uniform(self.config.seed, name, shape, bound).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {name: np.array(p.data, copy=True) for name, p in self.named_params()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_params())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(
                f"state does not match the model: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"parameter {name}: stored shape {arr.shape} vs model {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)

    # -- forward ------------------------------------------------------------

    def _check_frame(self, name: str, x: Tensor) -> None:
        s = self.config.scale
        if x.data.ndim != 3 or x.data.shape[2] != 3:
            raise ShapeError(f"{name} must be (h, w, 3), got {tuple(x.shape)}")
        h, w, _ = x.data.shape
        if h % s or w % s:
            raise ShapeError(
                f"{name} is {h}x{w}, not divisible by scale {s}; use infer_padded"
            )

    def _run(
        self,
        x0: Tensor,
        x1: Tensor,
        want_trace: bool = False,
        keep_similarity: bool = False,
    ) -> ForwardTrace:
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        x1 = x1 if isinstance(x1, Tensor) else Tensor(x1)
        self._check_frame("frame 0", x0)
        self._check_frame("frame 1", x1)
        if x0.data.shape != x1.data.shape:
            raise ShapeError(
                f"frames disagree: {tuple(x0.shape)} vs {tuple(x1.shape)}"
            )
        cfg = self.config
        s, d = cfg.scale, cfg.channels

        u0 = ag.pixel_unshuffle(x0, s)
        u1 = ag.pixel_unshuffle(x1, s)
        y = self.head(ag.concat([u0, u1], axis=2))
        f0 = self.frame_enc(u0)
        f1 = self.frame_enc(u1)
        hh, ww, _ = y.data.shape

        trunk, cs_results, ia_weights = [], [], []
        for i, group in enumerate(self.groups):
            y = group(y)
            if i < len(self.cs):
                r0, r1 = cs_pair(
                    y, f0, f1, self.cs[i],
                    normalize_qk=cfg.normalize_qk,
                    keep_similarity=keep_similarity,
                )
                weights = ia_forward(r0.s, r1.s, r0.d_max, r1.d_max, self.ia[i])
                a0 = ag.broadcast_to(weights.a0, (hh, ww, d))
                a1 = ag.broadcast_to(weights.a1, (hh, ww, d))
                y = self.fusion[i](
                    ag.concat([y, ag.mul(r0.s, a0), ag.mul(r1.s, a1)], axis=2)
                )
                if want_trace:
                    cs_results.append((r0, r1))
                    ia_weights.append(weights)
            if want_trace:
                trunk.append(y)

        prediction = ag.pixel_shuffle(self.tail(y), s)
        return ForwardTrace(
            prediction=prediction, trunk=trunk, cs_results=cs_results, ia_weights=ia_weights
        )

    def forward(self, x0, x1) -> Tensor:
        return self._run(x0, x1).prediction

    __call__ = forward

    def trace(self, x0, x1, keep_similarity: bool = False) -> ForwardTrace:
        """Forward pass that keeps per-stage internals for inspection.

        With ``keep_similarity`` each SimilarityResult also carries its full
        NxN attention matrix, which is large; leave it off unless a query
        row is actually wanted.
        """
        return self._run(x0, x1, want_trace=True, keep_similarity=keep_similarity)

    def intermediate_predictions(self, x0, x1) -> list:
        """Decode the trunk after every group through the shared tail.

        The last entry is the model output itself (same tensor data as
        :meth:`forward` on the same inputs).
        """
        trace = self._run(x0, x1, want_trace=True)
        outs = []
        for y in trace.trunk[:-1]:
            outs.append(ag.pixel_shuffle(self.tail(y), self.config.scale))
        outs.append(trace.prediction)
        return outs

    def infer_padded(self, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
        """Interpolate frames of arbitrary size.

        Edge-replicates up to the next multiple of the scale factor, runs
        the network without recording, and crops back.
        """
        x0 = np.asarray(x0)
        x1 = np.asarray(x1)
        if x0.shape != x1.shape or x0.ndim != 3 or x0.shape[2] != 3:
            raise ShapeError(
                f"infer_padded wants two equal (h, w, 3) frames, got {x0.shape} and {x1.shape}"
            )
        s = self.config.scale
        h, w, _ = x0.shape
        ph = (-h) % s
        pw = (-w) % s
        pad = ((0, ph), (0, pw), (0, 0))
        with ag.no_grad():
            out = self.forward(
                Tensor(np.pad(x0, pad, mode="edge")),
                Tensor(np.pad(x1, pad, mode="edge")),
            )
        return np.asarray(out.data[:h, :w, :])
