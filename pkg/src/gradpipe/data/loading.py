"""Turning task rows into stacked tensors and mini-batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from ..tensor import RngState, default_rng, get_default_dtype
from .columns import FactorColumn, IntegerColumn, NumericColumn
from .lazy import LazyTensorColumn, materialize
from .task import Task

ASSEMBLIES = ("numeric", "categorical", "lazy")


@dataclass
class Batch:
    x: dict
    y: np.ndarray | None
    index: np.ndarray

    def __len__(self):
        return len(self.index)


def numeric_features(task: Task) -> tuple[str, ...]:
    return tuple(f for f in task.feature_names
                 if isinstance(task.columns[f], (NumericColumn, IntegerColumn)))


def factor_features(task: Task) -> tuple[str, ...]:
    return tuple(f for f in task.feature_names if isinstance(task.columns[f], FactorColumn))


def lazy_features(task: Task) -> tuple[str, ...]:
    return tuple(f for f in task.feature_names if isinstance(task.columns[f], LazyTensorColumn))


def assemble(task: Task, kind: str, features, positions=None, phase: str = "predict",
             rng: RngState | None = None) -> np.ndarray:
    """Stack the given features for the rows at storage ``positions``.

    numeric: (B, F) floats, integers converted; categorical: (B, F) int64 codes;
    lazy: materialized elements of the single lazy column stacked to (B, ...).
    """
    features = tuple(features)
    if kind == "numeric":
        cols = []
        for f in features:
            c = task.columns[f]
            if isinstance(c, NumericColumn):
                cols.append(c.values)
            elif isinstance(c, IntegerColumn):
                cols.append(c.as_float())
            else:
                raise TypeError(f"feature {f!r} is not numeric")
        n = task.nrow
        mat = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
        mat = mat.astype(get_default_dtype())
        return mat if positions is None else mat[positions]
    if kind == "categorical":
        cols = []
        for f in features:
            c = task.columns[f]
            if not isinstance(c, FactorColumn):
                raise TypeError(f"feature {f!r} is not categorical")
            cols.append(c.codes)
        mat = np.stack(cols, axis=1) if cols else np.zeros((task.nrow, 0), dtype=np.int64)
        return mat if positions is None else mat[positions]
    if kind == "lazy":
        if len(features) != 1:
            raise ValueError("lazy assembly takes exactly one column")
        col = task.columns[features[0]]
        if not isinstance(col, LazyTensorColumn):
            raise TypeError(f"feature {features[0]!r} is not a lazy tensor column")
        return materialize(col, positions, phase, rng, stack=True)
    raise ValueError(f"unknown assembly {kind!r}")


def targets(task: Task, positions=None) -> np.ndarray:
    col = task.columns[task.target]
    if isinstance(col, FactorColumn):
        y = col.codes
    else:
        y = col.values.astype(get_default_dtype()).reshape(-1, 1)
    return y if positions is None else y[positions]


class BatchSource:
    """Pre-stacks the tabular inputs of a task once so batches are cheap slices.

    ``ingress`` maps input names to objects with ``assembly`` and ``features``
    attributes (or ``(assembly, features)`` pairs).  Lazy inputs are
    materialized per batch.
    """

    def __init__(self, task: Task, ingress: Mapping | None = None):
        if ingress is None:
            ingress = {"x": ("numeric", numeric_features(task))}
        self.task = task
        self.ingress = {}
        self._cache = {}
        for name, spec in ingress.items():
            kind, feats = (spec if isinstance(spec, tuple) else (spec.assembly, spec.features))
            self.ingress[name] = (kind, tuple(feats))
            if kind != "lazy":
                self._cache[name] = assemble(task, kind, feats)
        self._y = targets(task) if task.target in task.columns else None

    def __len__(self):
        return self.task.nrow

    def x(self, positions, phase: str = "predict", rng: RngState | None = None) -> dict:
        out = {}
        for name, (kind, feats) in self.ingress.items():
            if kind == "lazy":
                out[name] = assemble(self.task, kind, feats, positions, phase, rng)
            else:
                out[name] = self._cache[name][positions]
        return out

    def y(self, positions):
        return None if self._y is None else self._y[positions]

    def batch(self, positions, phase: str = "predict", rng: RngState | None = None) -> Batch:
        return Batch(self.x(positions, phase, rng), self.y(positions), self.task.row_ids[positions])

    def iter(self, batch_size: int, shuffle: bool = False, rng: RngState | None = None,
             phase: str = "train") -> Iterator[Batch]:
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        n = len(self)
        if n == 0:
            raise ValueError("cannot iterate over an empty task")
        rng = rng or default_rng()
        order = rng.generator().permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, batch_size):
            yield self.batch(order[start:start + batch_size], phase, rng)


def batch_iter(task: Task, batch_size: int, shuffle: bool = False, rng: RngState | None = None,
               phase: str = "train", ingress: Mapping | None = None) -> Iterator[Batch]:
    """Mini-batches covering every row exactly once; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    return BatchSource(task, ingress).iter(batch_size, shuffle, rng, phase)
