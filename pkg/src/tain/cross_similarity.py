"""Cross-frame similarity attention with hard value retrieval.

Queries come from the interpolation trunk feature map, keys and values
from an input-frame feature map.  Query and key projections share one
weight matrix, so a trunk feature and a frame feature that agree in
content project to nearby directions regardless of which side they sit
on.  Each query retrieves the single best-matching value row (argmax
over the softmaxed similarity row) and adds it, scaled by a learned
scalar that starts at zero, onto the trunk feature.  The argmax index
is a hard selection: gradients flow into the retrieved value row, the
similarity row (through the row maximum), and the trunk, but never
through the act of choosing the index.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError

# refuse attention maps whose N x N score matrix would dwarf the model
MAX_POSITIONS = 16384


def _check_map(name: str, t: Tensor, d: int) -> None:
    if t.data.ndim != 3 or t.data.shape[2] != d:
        raise ShapeError(f"{name} must be (h, w, {d}), got {tuple(t.shape)}")


@dataclasses.dataclass
class CSParams:
    """Projections for one cross-similarity stage.

    w_qk is used for queries and keys both; w_v projects values; alpha
    scales the retrieved value and starts at zero so a fresh stage is a
    no-op on the trunk.
    """

    w_qk: Tensor
    w_v: Tensor
    alpha: Tensor

    @classmethod
    def create(cls, d: int) -> "CSParams":
        return cls(
            w_qk=Tensor(np.zeros((d, d), dtype=np.float32), requires_grad=True),
            w_v=Tensor(np.zeros((d, d), dtype=np.float32), requires_grad=True),
            alpha=Tensor(np.zeros((), dtype=np.float32), requires_grad=True),
        )

    def named_params(self):
        yield "w_qk", self.w_qk
        yield "w_v", self.w_v
        yield "alpha", self.alpha


@dataclasses.dataclass
class SimilarityResult:
    """One direction of cross attention.

    s: trunk enriched with the retrieved values, (h, w, d).
    d_max: per-query maximum similarity after softmax, (h, w, 1).
    index: retrieved flat source position per query, (h*w,) ints.
    similarity: full softmaxed (h*w, h*w) map, kept only on request.
    """

    s: Tensor
    d_max: Tensor
    index: np.ndarray
    similarity: Tensor | None = None


def cs_forward(
    y: Tensor,
    x: Tensor,
    params: CSParams,
    normalize_qk: bool = True,
    keep_similarity: bool = False,
) -> SimilarityResult:
    """Attend from trunk map ``y`` into frame map ``x``.

    With ``normalize_qk`` the similarity is cosine (rows scaled to unit
    norm) which keeps scores in [-1, 1] regardless of feature magnitude;
    either way scores are scaled by 1/sqrt(d) before the softmax.
    """
    d = params.w_qk.data.shape[0]
    _check_map("query map", y, d)
    _check_map("key map", x, d)
    h, w, _ = y.data.shape
    n = h * w
    if n > MAX_POSITIONS:
        raise ShapeError(
            f"similarity map {h}x{w} has {n} positions, above the {MAX_POSITIONS} "
            "limit; attend on a coarser grid"
        )

    y2 = ag.reshape(y, (n, d))
    x2 = ag.reshape(x, (x.data.shape[0] * x.data.shape[1], d))
    if x2.data.shape[0] != n:
        raise ShapeError(
            f"query map {y.data.shape[:2]} and key map {x.data.shape[:2]} disagree"
        )

    q = ag.matmul(y2, params.w_qk)
    k = ag.matmul(x2, params.w_qk)
    v = ag.matmul(x2, params.w_v)
    if normalize_qk:
        q = ag.l2_normalize(q, axis=1)
        k = ag.l2_normalize(k, axis=1)
    scores = ag.mul(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(d))
    sim = ag.softmax(scores, axis=1)

    d_max = ag.reduce_max(sim, axis=1, keepdims=True)  # (n, 1)
    index = np.argmax(scores.data, axis=1)  # hard retrieval, ties to first
    retrieved = ag.take_rows(v, index)
    s = ag.add(y2, ag.mul(retrieved, params.alpha))

    return SimilarityResult(
        s=ag.reshape(s, (h, w, d)),
        d_max=ag.reshape(d_max, (h, w, 1)),
        index=index,
        similarity=sim if keep_similarity else None,
    )


def cs_pair(
    y: Tensor,
    f0: Tensor,
    f1: Tensor,
    params: CSParams,
    normalize_qk: bool = True,
    keep_similarity: bool = False,
) -> tuple[SimilarityResult, SimilarityResult]:
    """Attend from the trunk into both frame maps with shared projections."""
    r0 = cs_forward(y, f0, params, normalize_qk=normalize_qk, keep_similarity=keep_similarity)
    r1 = cs_forward(y, f1, params, normalize_qk=normalize_qk, keep_similarity=keep_similarity)
    return r0, r1
