"""Deterministic synthetic segmentation scenes.

Each image is a flat background (class 0) with one or two colored shapes per
foreground class: rectangles for odd class ids, disks for even ones. Colors
are class-correlated with additive gaussian noise, so a pixel-local model can
do well on shape interiors while boundaries and noise reward context.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

NOISE_SIGMA = 0.05
BACKGROUND_COLOR = (0.25, 0.25, 0.25)


class DataError(ValueError):
    pass


@dataclass
class SyntheticDataset:
    """Aligned image/mask stacks plus the recipe that generated them."""

    images: np.ndarray  # (count, H, W, 3) float64 in [0, 1]
    masks: np.ndarray  # (count, H, W) int64 in [0, classes)
    classes: int
    seed: int

    def __len__(self) -> int:
        return self.images.shape[0]

    def image(self, i: int) -> Tensor:
        return Tensor(self.images[i])

    def mask(self, i: int) -> np.ndarray:
        return self.masks[i]


def class_palette(classes: int) -> np.ndarray:
    """Fixed, well-separated color per class; class 0 is the background."""
    colors = [BACKGROUND_COLOR]
    for k in range(1, classes):
        hue = (k - 1) / max(classes - 1, 1)
        colors.append(colorsys.hsv_to_rgb(hue, 0.85, 0.95))
    return np.asarray(colors, dtype=np.float64)


def _paint_rect(img, mask, rng, size, color, k):
    side = rng.integers(size // 6, size // 3 + 1, size=2)
    top = rng.integers(0, size - side[0] + 1)
    left = rng.integers(0, size - side[1] + 1)
    img[top : top + side[0], left : left + side[1]] = color
    mask[top : top + side[0], left : left + side[1]] = k


def _paint_disk(img, mask, rng, size, color, k):
    r = int(rng.integers(size // 8, size // 4 + 1))
    cy = int(rng.integers(r, size - r + 1))
    cx = int(rng.integers(r, size - r + 1))
    yy, xx = np.ogrid[:size, :size]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[inside] = color
    mask[inside] = k


def gen_synthetic(seed: int, count: int, size: int, classes: int) -> SyntheticDataset:
    """Generate ``count`` scenes of ``size`` x ``size`` pixels, bit-reproducibly."""
    if classes < 2:
        raise DataError(f"need at least 2 classes, got {classes}")
    if count < 1:
        raise DataError(f"count must be positive, got {count}")
    if size < 8 or size % 4:
        raise DataError(
            f"size must be a multiple of 4 and at least 8, got {size}"
        )
    rng = np.random.default_rng(seed)
    palette = class_palette(classes)
    images = np.empty((count, size, size, 3), dtype=np.float64)
    masks = np.empty((count, size, size), dtype=np.int64)
    for i in range(count):
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = palette[0]
        mask = np.zeros((size, size), dtype=np.int64)
        for k in range(1, classes):
            for _ in range(int(rng.integers(1, 3))):
                if k % 2 == 1:
                    _paint_rect(img, mask, rng, size, palette[k], k)
                else:
                    _paint_disk(img, mask, rng, size, palette[k], k)
        img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
        np.clip(img, 0.0, 1.0, out=img)
        images[i] = img
        masks[i] = mask
    return SyntheticDataset(images=images, masks=masks, classes=classes, seed=seed)
