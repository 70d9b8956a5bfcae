"""Dense multi-head self-attention over all N*L^2 tokens.

The baseline interaction the graph block replaces. Every token attends to
every other, so the materialized score matrix is T x T per head - the
quadratic interaction state the complexity module accounts for.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .patching import TokenGrid
from .tensor import ShapeError, Tensor, concat, matmul, reshape, scale, softmax, transpose

Probe = Callable[[str, np.ndarray], None]


@dataclass
class AttentionHead:
    """Query/key/value maps, each C' x d_h."""

    wq: Tensor
    wk: Tensor
    wv: Tensor


@dataclass
class MhaWeights:
    heads: list[AttentionHead]
    out: Tensor  # (H * d_h) x C'

    @property
    def head_count(self) -> int:
        return len(self.heads)

    @property
    def head_dim(self) -> int:
        return self.heads[0].wq.shape[1]


def mha_forward(x: TokenGrid, w: MhaWeights, probe: Optional[Probe] = None) -> TokenGrid:
    """Scaled dot-product attention per head, concatenated and output-mapped.

    Shape preserving; the residual is the encoder's job, not this function's.
    """
    c = x.channels
    if w.heads[0].wq.shape[0] != c:
        raise ShapeError(
            f"attention maps expect {w.heads[0].wq.shape[0]} channels, tokens have {c}"
        )
    if w.out.shape != (w.head_count * w.head_dim, c):
        raise ShapeError(
            f"output map shape {w.out.shape} does not match "
            f"{w.head_count} heads of dim {w.head_dim} -> {c}"
        )
    t = x.n_patches * x.positions
    seq = reshape(x.tokens, (t, c))
    attended = []
    inv_scale = 1.0 / np.sqrt(w.head_dim)
    for head in w.heads:
        q = scale(matmul(seq, head.wq), inv_scale)
        k = matmul(seq, head.wk)
        v = matmul(seq, head.wv)
        scores = matmul(q, transpose(k))  # (T, T)
        if probe is not None:
            probe("attention_scores", scores.data)
        weights = softmax(scores, axis=-1)
        attended.append(matmul(weights, v))
    merged = attended[0] if len(attended) == 1 else concat(attended, axis=1)
    out = matmul(merged, w.out)
    return x.with_tokens(reshape(out, x.tokens.shape))


def attention_state_size(t: int) -> int:
    """Score-matrix entry count per head for a T-token sequence."""
    if t < 1:
        raise ValueError(f"token count must be >= 1, got {t}")
    return t * t


def init_mha(rng: np.random.Generator, channels: int, head_count: int) -> MhaWeights:
    if head_count < 1 or channels % head_count:
        raise ShapeError(
            f"{channels} channels not divisible into {head_count} heads"
        )
    d = channels // head_count
    b = 1.0 / np.sqrt(channels)
    heads = [
        AttentionHead(
            wq=Tensor(rng.uniform(-b, b, size=(channels, d)), requires_grad=True),
            wk=Tensor(rng.uniform(-b, b, size=(channels, d)), requires_grad=True),
            wv=Tensor(rng.uniform(-b, b, size=(channels, d)), requires_grad=True),
        )
        for _ in range(head_count)
    ]
    out = Tensor(rng.uniform(-b, b, size=(channels, channels)), requires_grad=True)
    return MhaWeights(heads=heads, out=out)
