"""Graph reasoning block: the patch-interaction mechanism.

Tokens interact in three steps instead of all-pairs attention:

1. patch projection - every patch is folded onto M latent nodes through a
   learned weight row per (node, patch) pair, giving an M x C' graph state;
2. information diffusion - a single-layer graph convolution
   F = ((I - A) G) W_u over a learned adjacency A, optionally stacked;
3. node mapping - nodes are scattered back to token positions with the
   transposed projection weights and added to the input as a residual.

The only coupling structure materialized is the M x M adjacency, so the
interaction state is independent of the token count.

The projection reduces over patches with :func:`great.tensor.psum` (per-patch
batched matmuls, then an order-canonical sum), which keeps the whole block
bit-exactly equivariant under patch permutations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .patching import TokenGrid
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    matmul,
    psum,
    slice_axis,
    sub,
    transpose,
)

Probe = Callable[[str, np.ndarray], None]


@dataclass
class GraphLayer:
    """One diffusion layer: adjacency (M x M) and state update (C' x C')."""

    adjacency: Tensor
    update: Tensor


@dataclass
class GreabWeights:
    """Projection weights plus one or more stacked graph layers.

    ``w_proj`` has shape (M, N, L^2): row (m, n) is the projection weight for
    patch n onto node m.
    """

    w_proj: Tensor
    layers: list[GraphLayer]

    @property
    def node_count(self) -> int:
        return self.w_proj.shape[0]

    @property
    def graph_depth(self) -> int:
        return len(self.layers)


@dataclass
class GraphState:
    """M node vectors, one implicit visual center per row."""

    nodes: Tensor


def _check_proj(x: TokenGrid, w: GreabWeights) -> None:
    m, n, l2 = w.w_proj.shape
    if n != x.n_patches:
        raise ShapeError(
            f"projection expects N={n} patches, tokens have {x.n_patches}"
        )
    if l2 != x.positions:
        raise ShapeError(
            f"projection expects L^2={l2} positions, tokens have {x.positions}"
        )
    if m < 1:
        raise ShapeError(f"node count M must be >= 1, got {m}")


def patch_project(x: TokenGrid, w: GreabWeights) -> GraphState:
    """Fold patches onto graph nodes: node m accumulates w_proj[m, n] . X_n.

    Per-patch contributions are computed with identical-shape batched matmuls
    and reduced with a canonical-order sum, so permuting patches (together
    with the matching w_proj rows) cannot change the result bits.
    """
    _check_proj(x, w)
    per_patch = matmul(transpose(w.w_proj, (1, 0, 2)), x.tokens)  # (N, M, C')
    return GraphState(psum(per_patch, axis=0))


def diffuse(g: GraphState, layer: GraphLayer, probe: Optional[Probe] = None) -> GraphState:
    """One graph convolution: F = ((I - A) G) W_u.

    The identity term is a constant, never a parameter. ``probe``, when given,
    observes the materialized (I - A) coupling buffer (the block's entire
    interaction state).
    """
    m = g.nodes.shape[0]
    if layer.adjacency.shape != (m, m):
        raise ShapeError(
            f"adjacency shape {layer.adjacency.shape} does not match {m} nodes"
        )
    c = g.nodes.shape[1]
    if layer.update.shape != (c, c):
        raise ShapeError(
            f"update shape {layer.update.shape} does not match {c} channels"
        )
    smoothing = sub(Tensor(np.eye(m)), layer.adjacency)
    if probe is not None:
        probe("graph_coupling", smoothing.data)
    return GraphState(matmul(matmul(smoothing, g.nodes), layer.update))


def diffuse_stack(g: GraphState, w: GreabWeights, probe: Optional[Probe] = None) -> GraphState:
    """Apply every graph layer in order; no nonlinearity in between."""
    if not w.layers:
        raise ShapeError("graph depth must be >= 1")
    for layer in w.layers:
        g = diffuse(g, layer, probe)
    return g


def node_map(f: GraphState, x: TokenGrid, w: GreabWeights) -> TokenGrid:
    """Scatter nodes back to token positions and add the residual.

    O_n = sum_m w_proj[m, n]^T F_m + X_n.
    """
    return x.with_tokens(add(_node_scatter(f, x, w), x.tokens))


def _node_scatter(f: GraphState, x: TokenGrid, w: GreabWeights) -> Tensor:
    _check_proj(x, w)
    if f.nodes.shape[0] != w.node_count:
        raise ShapeError(
            f"graph state has {f.nodes.shape[0]} nodes, weights expect {w.node_count}"
        )
    back = transpose(w.w_proj, (1, 2, 0))  # (N, L^2, M)
    return matmul(back, f.nodes)  # (N, L^2, C')


def greab_interact(x: TokenGrid, w: GreabWeights, probe: Optional[Probe] = None) -> Tensor:
    """Residual-free project -> diffuse -> map-back; returns raw tokens."""
    f = diffuse_stack(patch_project(x, w), w, probe)
    return _node_scatter(f, x, w)


def greab_forward(x: TokenGrid, w: GreabWeights, probe: Optional[Probe] = None) -> TokenGrid:
    """Full block: the three steps plus the residual; shape preserving."""
    return x.with_tokens(add(greab_interact(x, w, probe), x.tokens))


def multi_head_interact(
    x: TokenGrid, heads: Sequence[GreabWeights], probe: Optional[Probe] = None
) -> Tensor:
    """Residual-free blocks over contiguous channel slices, concatenated."""
    n_heads = len(heads)
    c = x.channels
    if n_heads < 1:
        raise ShapeError("need at least one head")
    if c % n_heads:
        raise ShapeError(f"{c} channels not divisible into {n_heads} heads")
    if n_heads == 1:
        return greab_interact(x, heads[0], probe)
    d = c // n_heads
    outs = []
    for h, w in enumerate(heads):
        part = x.with_tokens(slice_axis(x.tokens, 2, h * d, (h + 1) * d))
        outs.append(greab_interact(part, w, probe))
    return concat(outs, axis=2)


def multi_head_greab(
    x: TokenGrid, heads: Sequence[GreabWeights], probe: Optional[Probe] = None
) -> TokenGrid:
    """Run one block per channel slice; a single residual added at the end."""
    return x.with_tokens(add(multi_head_interact(x, heads, probe), x.tokens))


def init_greab(
    rng: np.random.Generator,
    node_count: int,
    n_patches: int,
    positions: int,
    channels: int,
    graph_depth: int = 1,
) -> GreabWeights:
    """Random init keeping early training near the residual path.

    Adjacency entries are uniform within +-1/M so (I - A) starts near the
    identity; projection and update scales follow the usual 1/sqrt(fan-in).
    """
    if node_count < 1 or graph_depth < 1:
        raise ShapeError(
            f"node count and graph depth must be >= 1, got M={node_count}, depth={graph_depth}"
        )
    pb = 1.0 / np.sqrt(n_patches * positions)
    w_proj = Tensor(
        rng.uniform(-pb, pb, size=(node_count, n_patches, positions)),
        requires_grad=True,
    )
    ub = 1.0 / np.sqrt(channels)
    layers = [
        GraphLayer(
            adjacency=Tensor(
                rng.uniform(-1.0 / node_count, 1.0 / node_count, size=(node_count, node_count)),
                requires_grad=True,
            ),
            update=Tensor(
                rng.uniform(-ub, ub, size=(channels, channels)), requires_grad=True
            ),
        )
        for _ in range(graph_depth)
    ]
    return GreabWeights(w_proj=w_proj, layers=layers)
