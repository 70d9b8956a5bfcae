"""Image-to-token conversion and its exact inverse.

An H x W x C image is cut into non-overlapping L x L tiles in row-major tile
order; each tile is flattened row-major to L^2 positions, linearly embedded
to C' channels, and shifted by a learnable additive position table. ``unpatch``
undoes the spatial arrangement for any channel count, which is what the
segmentation head uses to get back to pixel space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, matmul, reshape, transpose


class ConfigError(ValueError):
    """Sizes or knobs that cannot form a valid model."""


@dataclass
class TokenGrid:
    """Embedded patches plus the provenance needed to invert them.

    ``tokens`` has shape (N, L^2, C') with N = H*W / L^2.
    """

    tokens: Tensor
    height: int
    width: int
    patch_side: int

    @property
    def n_patches(self) -> int:
        return self.tokens.shape[0]

    @property
    def positions(self) -> int:
        return self.tokens.shape[1]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.height, self.width, self.patch_side)


@dataclass
class PatchEmbedWeights:
    """Linear embedding (C x C') plus the additive position table (N, L^2, C')."""

    embed: Tensor
    pos: Tensor


def _check_divisible(h: int, w: int, l: int) -> None:
    if l <= 0 or h % l or w % l:
        raise ConfigError(
            f"image {h}x{w} is not divisible into {l}x{l} patches"
        )


def partition(image: Tensor, patch_side: int) -> Tensor:
    """Cut an (H, W, C) image into (N, L^2, C) patch rows, losslessly.

    Tiles are ordered row-major over the tile grid and flattened row-major
    within each tile.
    """
    h, w, c = image.shape
    l = patch_side
    _check_divisible(h, w, l)
    grid = reshape(image, (h // l, l, w // l, l, c))
    grid = transpose(grid, (0, 2, 1, 3, 4))  # (th, tw, l, l, c)
    return reshape(grid, ((h // l) * (w // l), l * l, c))


def unpatch(tokens: Tensor, height: int, width: int, patch_side: int) -> Tensor:
    """Exact inverse of :func:`partition` for any channel count."""
    l = patch_side
    _check_divisible(height, width, l)
    n, pos, k = tokens.shape
    if n * pos != height * width or pos != l * l:
        raise ConfigError(
            f"{n}x{pos} tokens cannot tile a {height}x{width} image with L={l}"
        )
    grid = reshape(tokens, (height // l, width // l, l, l, k))
    grid = transpose(grid, (0, 2, 1, 3, 4))
    return reshape(grid, (height, width, k))


def embed_and_position(patches: Tensor, weights: PatchEmbedWeights) -> Tensor:
    """Linear patch embedding followed by the additive position table."""
    n, pos, c = patches.shape
    if weights.embed.shape[0] != c:
        raise ConfigError(
            f"embedding expects {weights.embed.shape[0]} input channels, patches have {c}"
        )
    tokens = matmul(patches, weights.embed)
    if weights.pos.shape != tokens.shape:
        raise ConfigError(
            f"position table shape {weights.pos.shape} does not match tokens {tokens.shape}"
        )
    return add(tokens, weights.pos)


def tokenize(image: Tensor, patch_side: int, weights: PatchEmbedWeights) -> TokenGrid:
    """partition + embed_and_position, tracking provenance."""
    h, w, _ = image.shape
    tokens = embed_and_position(partition(image, patch_side), weights)
    return TokenGrid(tokens, h, w, patch_side)


def init_patch_embed(
    rng: np.random.Generator,
    in_channels: int,
    channels: int,
    n_patches: int,
    patch_side: int,
) -> PatchEmbedWeights:
    """Small-init embedding and position table.

    The embedding is uniform within +-1/sqrt(C) so early tokens stay near the
    raw patch statistics; the position table starts near zero.
    """
    bound = 1.0 / np.sqrt(in_channels)
    embed = Tensor(
        rng.uniform(-bound, bound, size=(in_channels, channels)), requires_grad=True
    )
    pos = Tensor(
        rng.uniform(-0.02, 0.02, size=(n_patches, patch_side * patch_side, channels)),
        requires_grad=True,
    )
    return PatchEmbedWeights(embed=embed, pos=pos)
