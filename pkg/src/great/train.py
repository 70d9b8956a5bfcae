"""Deterministic SGD training on synthetic scenes.

Plain momentum-free stochastic gradient descent over mean per-pixel
cross-entropy. Shuffling, initialization, and therefore the whole metrics
stream are functions of the config seed alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .data import SyntheticDataset
from .encoder import (
    ModelConfig,
    ModelWeights,
    init_model,
    model_loss,
    model_predict,
    named_parameters,
)
from .metrics import MetricsRecord, evaluate
from .patching import ConfigError
from .tensor import NumericalError, Tensor, backward, scale


@dataclass
class RunConfig:
    """Model knobs plus the training-only ones; serialized as one flat dict."""

    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-2
    steps: int = 2000
    batch_size: int = 2

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.lr < 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError(
                f"steps must be >= 0 and batch_size >= 1, got {self.steps}, {self.batch_size}"
            )
        return self

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d.update(lr=self.lr, steps=self.steps, batch_size=self.batch_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        own = {}
        for f in fields(cls):
            if f.name != "model" and f.name in d:
                own[f.name] = d.pop(f.name)
        return cls(model=ModelConfig.from_dict(d), **own).validate()


@dataclass
class TrainResult:
    weights: ModelWeights
    records: list[MetricsRecord]
    final_miou: float
    final_pixacc: float


def sgd_step(mw: ModelWeights, lr: float) -> None:
    for _, p in named_parameters(mw):
        if p.grad is not None:
            p.data = p.data - lr * p.grad
        p.grad = None


def evaluate_model(mw: ModelWeights, ds: SyntheticDataset) -> tuple[float, float]:
    """(mIoU, PixAcc) of argmax predictions over a whole dataset."""
    preds = np.empty_like(ds.masks)
    for i in range(len(ds)):
        _, preds[i] = model_predict(ds.image(i), mw)
    return evaluate(preds, ds.masks, ds.classes)


def train(cfg: RunConfig, ds: SyntheticDataset) -> TrainResult:
    """Run the configured number of SGD steps; the last record carries metrics.

    Raises :class:`NumericalError` naming the step if the loss goes
    non-finite.
    """
    cfg.validate()
    if ds.classes != cfg.model.classes:
        raise ConfigError(
            f"dataset has {ds.classes} classes, config expects {cfg.model.classes}"
        )
    if ds.images.shape[1] != cfg.model.image_height or ds.images.shape[2] != cfg.model.image_width:
        raise ConfigError(
            f"dataset images are {ds.images.shape[1]}x{ds.images.shape[2]}, config expects "
            f"{cfg.model.image_height}x{cfg.model.image_width}"
        )
    mw = init_model(cfg.model)
    shuffle_rng = np.random.default_rng([cfg.model.seed, 1])
    order: list[int] = []
    records: list[MetricsRecord] = []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(shuffle_rng.permutation(len(ds)))
            batch.append(order.pop())
        losses = [model_loss(ds.image(i), ds.mask(i), mw) for i in batch]
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        loss = scale(total, 1.0 / len(losses))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at step {step}")
        backward(loss)
        sgd_step(mw, cfg.lr)
        records.append(
            MetricsRecord(step=step, loss=value, wall_ms=(time.perf_counter() - t0) * 1e3)
        )
    t0 = time.perf_counter()
    miou, pixacc = evaluate_model(mw, ds)
    if records:
        records[-1].miou = miou
        records[-1].pixacc = pixacc
        records[-1].wall_ms += (time.perf_counter() - t0) * 1e3
    return TrainResult(weights=mw, records=records, final_miou=miou, final_pixacc=pixacc)
