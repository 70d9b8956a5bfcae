"""Encoder layers, model configuration, and the segmentation head.

One encoder layer is pre-norm: y = interact(norm(x)) + x, then
z = mlp(norm(y)) + y, where the interaction is either the graph block or
dense attention (a tagged choice - the two are drop-in interchangeable).
Layers stack at a single spatial resolution and a linear head maps tokens to
per-pixel class logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator, Union

import numpy as np

from . import attention, greab
from .attention import MhaWeights, init_mha
from .greab import GreabWeights, init_greab
from .patching import (
    ConfigError,
    PatchEmbedWeights,
    TokenGrid,
    init_patch_embed,
    tokenize,
    unpatch,
)
from .tensor import Tensor, add, cross_entropy, gelu, layer_norm, matmul

INTERACTION_KINDS = ("greab", "mha")


@dataclass
class ModelConfig:
    """Every architecture knob in one record."""

    patch_side: int = 8
    channels: int = 32
    nodes: int = 16
    graph_depth: int = 1
    heads: int = 1
    layers: int = 4
    interaction: str = "greab"
    mlp_ratio: int = 4
    classes: int = 3
    image_height: int = 32
    image_width: int = 32
    seed: int = 0

    def validate(self) -> "ModelConfig":
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "interaction":
                if v not in INTERACTION_KINDS:
                    raise ConfigError(
                        f"interaction must be one of {INTERACTION_KINDS}, got {v!r}"
                    )
                continue
            if f.name == "seed":
                continue
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")
        if self.image_height % self.patch_side or self.image_width % self.patch_side:
            raise ConfigError(
                f"image {self.image_height}x{self.image_width} is not divisible "
                f"into {self.patch_side}x{self.patch_side} patches"
            )
        if self.channels % self.heads:
            raise ConfigError(
                f"{self.channels} channels not divisible into {self.heads} heads"
            )
        return self

    @property
    def n_patches(self) -> int:
        return (self.image_height * self.image_width) // (self.patch_side**2)

    @property
    def positions(self) -> int:
        return self.patch_side**2

    @property
    def tokens_per_image(self) -> int:
        return self.n_patches * self.positions

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class NormWeights:
    gamma: Tensor
    beta: Tensor


@dataclass
class MlpWeights:
    w1: Tensor  # C' -> r*C'
    w2: Tensor  # r*C' -> C'


@dataclass
class GreatLayerWeights:
    """Pre-norm sublayers; ``interaction`` is a list of graph-block heads or MHA."""

    norm1: NormWeights
    interaction: Union[list[GreabWeights], MhaWeights]
    norm2: NormWeights
    mlp: MlpWeights


@dataclass
class ModelWeights:
    config: ModelConfig
    embed: PatchEmbedWeights
    layers: list[GreatLayerWeights] = field(default_factory=list)
    head: Tensor = None  # C' x classes


def _norm(x: Tensor, w: NormWeights) -> Tensor:
    return layer_norm(x, w.gamma, w.beta)


def _interact(x: TokenGrid, w: GreatLayerWeights) -> Tensor:
    if isinstance(w.interaction, MhaWeights):
        return attention.mha_forward(x, w.interaction).tokens
    return greab.multi_head_interact(x, w.interaction)


def great_layer_forward(x: TokenGrid, w: GreatLayerWeights) -> TokenGrid:
    """norm -> interaction -> residual, then norm -> MLP -> residual."""
    normed = x.with_tokens(_norm(x.tokens, w.norm1))
    y = add(_interact(normed, w), x.tokens)
    hidden = gelu(matmul(_norm(y, w.norm2), w.mlp.w1))
    z = add(matmul(hidden, w.mlp.w2), y)
    return x.with_tokens(z)


def encoder_forward(
    image: Tensor, layers: list[GreatLayerWeights], embed: PatchEmbedWeights, patch_side: int
) -> TokenGrid:
    """partition -> embed+position -> stacked encoder layers."""
    x = tokenize(image, patch_side, embed)
    for w in layers:
        x = great_layer_forward(x, w)
    return x


def seg_head(tokens: TokenGrid, head: Tensor):
    """Per-token-position class logits, arranged back into pixel space.

    Returns (logits, mask): logits is a differentiable (H, W, classes)
    tensor, mask the per-pixel argmax with ties broken toward the lowest
    class index.
    """
    if head.shape[0] != tokens.channels:
        raise ConfigError(
            f"head expects {head.shape[0]} channels, tokens have {tokens.channels}"
        )
    logits = unpatch(
        matmul(tokens.tokens, head),
        tokens.height,
        tokens.width,
        tokens.patch_side,
    )
    mask = np.argmax(logits.data, axis=-1)
    return logits, mask


def model_forward(image: Tensor, mw: ModelWeights) -> TokenGrid:
    return encoder_forward(image, mw.layers, mw.embed, mw.config.patch_side)


def model_predict(image: Tensor, mw: ModelWeights):
    """Forward pass through encoder and head; returns (logits, mask)."""
    return seg_head(model_forward(image, mw), mw.head)


def model_loss(image: Tensor, mask: np.ndarray, mw: ModelWeights) -> Tensor:
    """Mean per-pixel cross-entropy of the predicted logits."""
    logits, _ = model_predict(image, mw)
    return cross_entropy(logits, mask)


def _init_layer(rng: np.random.Generator, cfg: ModelConfig) -> GreatLayerWeights:
    c = cfg.channels
    if cfg.interaction == "mha":
        interaction: Union[list[GreabWeights], MhaWeights] = init_mha(rng, c, cfg.heads)
    else:
        per_head = c // cfg.heads
        interaction = [
            init_greab(rng, cfg.nodes, cfg.n_patches, cfg.positions, per_head, cfg.graph_depth)
            for _ in range(cfg.heads)
        ]
    hb = 1.0 / np.sqrt(c)
    rb = 1.0 / np.sqrt(cfg.mlp_ratio * c)
    return GreatLayerWeights(
        norm1=NormWeights(Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True)),
        interaction=interaction,
        norm2=NormWeights(Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True)),
        mlp=MlpWeights(
            w1=Tensor(rng.uniform(-hb, hb, size=(c, cfg.mlp_ratio * c)), requires_grad=True),
            w2=Tensor(rng.uniform(-rb, rb, size=(cfg.mlp_ratio * c, c)), requires_grad=True),
        ),
    )


def init_model(cfg: ModelConfig, in_channels: int = 3) -> ModelWeights:
    """Deterministically initialize all weights from the config seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    embed = init_patch_embed(rng, in_channels, cfg.channels, cfg.n_patches, cfg.patch_side)
    layers = [_init_layer(rng, cfg) for _ in range(cfg.layers)]
    hb = 1.0 / np.sqrt(cfg.channels)
    head = Tensor(rng.uniform(-hb, hb, size=(cfg.channels, cfg.classes)), requires_grad=True)
    return ModelWeights(config=cfg, embed=embed, layers=layers, head=head)


def named_parameters(mw: ModelWeights) -> Iterator[tuple[str, Tensor]]:
    """Every trainable tensor with a stable, checkpoint-friendly name."""
    yield "embed.weight", mw.embed.embed
    yield "embed.pos", mw.embed.pos
    for i, layer in enumerate(mw.layers):
        p = f"layers.{i}"
        yield f"{p}.norm1.gamma", layer.norm1.gamma
        yield f"{p}.norm1.beta", layer.norm1.beta
        if isinstance(layer.interaction, MhaWeights):
            for h, head in enumerate(layer.interaction.heads):
                yield f"{p}.interaction.head{h}.wq", head.wq
                yield f"{p}.interaction.head{h}.wk", head.wk
                yield f"{p}.interaction.head{h}.wv", head.wv
            yield f"{p}.interaction.out", layer.interaction.out
        else:
            for h, gw in enumerate(layer.interaction):
                yield f"{p}.interaction.head{h}.w_proj", gw.w_proj
                for j, gl in enumerate(gw.layers):
                    yield f"{p}.interaction.head{h}.graph{j}.adjacency", gl.adjacency
                    yield f"{p}.interaction.head{h}.graph{j}.update", gl.update
        yield f"{p}.norm2.gamma", layer.norm2.gamma
        yield f"{p}.norm2.beta", layer.norm2.beta
        yield f"{p}.mlp.w1", layer.mlp.w1
        yield f"{p}.mlp.w2", layer.mlp.w2
    yield "head.weight", mw.head


def parameter_count(mw: ModelWeights) -> int:
    """Number of trainable scalars actually registered."""
    return sum(t.size for _, t in named_parameters(mw))
