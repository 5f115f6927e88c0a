"""Index-addressable datasets and the lazy tensor column."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from ..tensor import RngState, default_rng, get_default_dtype
from .columns import Column
from .transforms import TRAIN_ONLY, Transform


class IndexedDataset:
    """Wraps ``getter(i) -> {key: array}`` and counts every call."""

    def __init__(self, getter: Callable[[int], Mapping[str, np.ndarray]], length: int,
                 shapes: Mapping[str, tuple | None] | None = None):
        if length < 0:
            raise ValueError("dataset length must be non-negative")
        self.getter = getter
        self.length = int(length)
        self.shapes = dict(shapes or {})
        self.call_counter = 0

    def __len__(self):
        return self.length

    def __getitem__(self, i: int) -> Mapping[str, np.ndarray]:
        if not 0 <= i < self.length:
            raise IndexError(f"dataset index {i} out of range [0, {self.length})")
        self.call_counter += 1
        return self.getter(int(i))

    @classmethod
    def from_arrays(cls, **arrays: np.ndarray) -> "IndexedDataset":
        lengths = {len(a) for a in arrays.values()}
        if len(lengths) != 1:
            raise ValueError("arrays must share their first extent")
        stored = {k: np.asarray(a) for k, a in arrays.items()}
        return cls(lambda i: {k: a[i] for k, a in stored.items()}, lengths.pop(),
                   {k: tuple(a.shape[1:]) for k, a in stored.items()})


class LazyTensorColumn(Column):
    """A column of tensors that are fetched and transformed only on demand."""

    kind = "lazy_tensor"

    def __init__(self, dataset: IndexedDataset, key: str, indices=None,
                 transforms: Sequence[Transform] = (), declared_shape=None):
        self.dataset = dataset
        self.key = key
        self.indices = (np.arange(len(dataset), dtype=np.int64) if indices is None
                        else np.asarray(indices, dtype=np.int64))
        self.transforms = tuple(transforms)
        if declared_shape is None and not transforms:
            declared_shape = dataset.shapes.get(key)
        self.declared_shape = None if declared_shape is None else tuple(declared_shape)

    def __len__(self):
        return len(self.indices)

    def take(self, pos):
        return LazyTensorColumn(self.dataset, self.key, self.indices[pos], self.transforms,
                                self.declared_shape)

    def append(self, transform: Transform) -> "LazyTensorColumn":
        shape = transform.shape_rule(self.declared_shape)
        return LazyTensorColumn(self.dataset, self.key, self.indices,
                                self.transforms + (transform,), shape)

    def equals(self, other):
        return (isinstance(other, LazyTensorColumn) and other.dataset is self.dataset
                and other.key == self.key and other.transforms == self.transforms
                and np.array_equal(other.indices, self.indices))

    def __repr__(self):
        shape = "varying" if self.declared_shape is None else list(self.declared_shape)
        return f"<lazy_tensor[{len(self)}] shape={shape} transforms={len(self.transforms)}>"

    def materialize(self, rows=None, phase: str = "predict", rng: RngState | None = None,
                    stack: bool = False):
        return materialize(self, rows, phase, rng, stack)


def materialize(col: LazyTensorColumn, rows=None, phase: str = "predict",
                rng: RngState | None = None, stack: bool = False):
    """Fetch and transform the elements at positions ``rows`` of ``col``.

    Train-only transforms are skipped when ``phase == "predict"``, which
    makes prediction-time materialization a pure function of the row.
    """
    if phase not in ("train", "predict"):
        raise ValueError(f"phase must be 'train' or 'predict', got {phase!r}")
    pos = np.arange(len(col)) if rows is None else np.asarray(rows, dtype=np.int64)
    if pos.size and (pos.min() < 0 or pos.max() >= len(col)):
        raise IndexError("materialize rows out of range")
    active = [t for t in col.transforms if phase == "train" or t.phase != TRAIN_ONLY]
    gen = None
    if phase == "train" and any(t.phase == TRAIN_ONLY for t in active):
        gen = (rng or default_rng()).generator()
    dtype = get_default_dtype()
    out = []
    for p in pos:
        x = np.asarray(col.dataset[col.indices[p]][col.key], dtype=dtype)
        for t in active:
            x = t.apply(x, gen)
        x = np.asarray(x, dtype=dtype)
        if col.declared_shape is not None and None not in col.declared_shape \
                and x.shape != col.declared_shape:
            raise ValueError(f"element shape {x.shape} differs from declared {col.declared_shape}")
        out.append(x)
    if stack:
        if not out:
            shape = col.declared_shape if col.declared_shape and None not in col.declared_shape else (0,)
            return np.zeros((0, *shape), dtype=dtype)
        shapes = {x.shape for x in out}
        if len(shapes) != 1:
            raise ValueError(f"cannot stack elements of differing shapes {sorted(shapes)}")
        return np.stack(out)
    return out
