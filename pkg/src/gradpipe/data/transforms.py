"""Per-element tensor transforms used by lazy tensor columns.

Each transform acts on a single element (no batch dimension) and knows how
it changes the declared element shape.  ``None`` inside a shape stands for
an unknown extent; a declared shape of ``None`` means the elements vary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ALWAYS = "always"
TRAIN_ONLY = "train_only"


def _known(shape) -> bool:
    return shape is not None and all(s is not None for s in shape)


class Transform:
    phase = ALWAYS
    name = "transform"

    def shape_rule(self, shape):
        return shape

    def apply(self, x: np.ndarray, gen: np.random.Generator | None) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Reshape(Transform):
    """Reshape an element.  The leading entry of ``shape`` is the batch slot
    (``-1`` or ``None``) and is dropped for per-element application."""

    shape: tuple
    name = "reshape"

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        if not self.shape or self.shape[0] not in (-1, None):
            raise ValueError("reshape target must start with the batch marker -1")
        if sum(1 for s in self.shape[1:] if s == -1) > 1:
            raise ValueError("at most one -1 extent allowed")

    @property
    def element_shape(self) -> tuple:
        return tuple(self.shape[1:])

    def shape_rule(self, shape):
        target = self.element_shape
        if -1 not in target:
            if _known(shape) and math.prod(shape) != math.prod(target):
                raise ValueError(f"cannot reshape element {shape} to {target}")
            return target
        if not _known(shape):
            return tuple(None if s == -1 else s for s in target)
        known = math.prod(s for s in target if s != -1)
        total = math.prod(shape)
        if known == 0 or total % known:
            raise ValueError(f"cannot reshape element {shape} to {target}")
        return tuple(total // known if s == -1 else s for s in target)

    def apply(self, x, gen):
        try:
            return x.reshape(self.element_shape)
        except ValueError as err:
            raise ValueError(f"reshape of element {x.shape} failed: {err}") from None


def resize_bilinear(image: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array with half-pixel centers (align_corners=False)."""
    h2, w2 = (int(s) for s in size)
    if h2 <= 0 or w2 <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    if image.ndim != 3:
        raise ValueError(f"resize expects (C, H, W), got {image.shape}")
    _, h, w = image.shape
    if h < 1 or w < 1:
        raise ValueError("cannot resize an empty image")

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.maximum(src, 0.0)
        i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = axis_weights(h, h2)
    x0, x1, wx = axis_weights(w, w2)
    img = image.astype(np.float64)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    out = top * (1 - wy)[:, None] + bot * wy[:, None]
    return out.astype(image.dtype if image.dtype.kind == "f" else np.float64)


@dataclass(frozen=True)
class Resize(Transform):
    size: tuple
    name = "resize"

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if len(self.size) != 2 or min(self.size) <= 0:
            raise ValueError(f"resize needs two positive extents, got {self.size}")

    def shape_rule(self, shape):
        if shape is None:
            return (None, *self.size)
        if len(shape) != 3:
            raise ValueError(f"resize expects (C, H, W) elements, got {shape}")
        return (shape[0], *self.size)

    def apply(self, x, gen):
        return resize_bilinear(x, self.size)


@dataclass(frozen=True)
class Normalize(Transform):
    """Per-channel ``(x - mean) / std`` on (C, H, W) elements."""

    mean: tuple
    std: tuple
    name = "normalize"

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))
        if any(s <= 0 for s in self.std):
            raise ValueError("std must be positive")

    def shape_rule(self, shape):
        if shape is not None and shape[0] is not None and shape[0] != len(self.mean):
            raise ValueError(f"normalize has {len(self.mean)} channels, element has {shape[0]}")
        return shape

    def apply(self, x, gen):
        mean = np.asarray(self.mean, dtype=x.dtype).reshape(-1, *([1] * (x.ndim - 1)))
        std = np.asarray(self.std, dtype=x.dtype).reshape(-1, *([1] * (x.ndim - 1)))
        return (x - mean) / std


def flip(image: np.ndarray, axis: str, p: float, gen: np.random.Generator) -> np.ndarray:
    if image.ndim != 3:
        raise ValueError(f"flip expects a (C, H, W) image, got {image.shape}")
    if axis not in ("horizontal", "vertical"):
        raise ValueError(f"unknown flip axis {axis!r}")
    if gen.random() < p:
        return np.flip(image, axis=2 if axis == "horizontal" else 1).copy()
    return image


@dataclass(frozen=True)
class Flip(Transform):
    axis: str = "horizontal"
    p: float = 0.5
    phase = TRAIN_ONLY
    name = "flip"

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("flip probability must lie in [0, 1]")
        if self.axis not in ("horizontal", "vertical"):
            raise ValueError(f"unknown flip axis {self.axis!r}")

    def apply(self, x, gen):
        return flip(x, self.axis, self.p, gen)


def random_crop(image: np.ndarray, size, pad_if_needed: bool, gen: np.random.Generator) -> np.ndarray:
    """Uniform random (h, w) window; with ``pad_if_needed`` short sides are
    zero-padded on both ends by the missing amount first."""
    if image.ndim != 3:
        raise ValueError(f"crop expects a (C, H, W) image, got {image.shape}")
    h, w = (int(s) for s in size)
    _, H, W = image.shape
    if h > H or w > W:
        if not pad_if_needed:
            raise ValueError(f"crop {h}x{w} larger than image {H}x{W}")
        ph, pw = max(h - H, 0), max(w - W, 0)
        image = np.pad(image, ((0, 0), (ph, ph), (pw, pw)))
        _, H, W = image.shape
    top = int(gen.integers(0, H - h + 1))
    left = int(gen.integers(0, W - w + 1))
    return image[:, top:top + h, left:left + w].copy()


@dataclass(frozen=True)
class RandomCrop(Transform):
    size: tuple
    pad_if_needed: bool = False
    phase = TRAIN_ONLY
    name = "random_crop"

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))

    def shape_rule(self, shape):
        if shape is None:
            return (None, *self.size)
        if not self.pad_if_needed and _known(shape[1:]) and (
                self.size[0] > shape[1] or self.size[1] > shape[2]):
            raise ValueError(f"crop {self.size} larger than element {shape}")
        return (shape[0], *self.size)

    def apply(self, x, gen):
        return random_crop(x, self.size, self.pad_if_needed, gen)
