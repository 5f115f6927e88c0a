"""Typed column storage for tasks."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class Column:
    kind = ""

    def __len__(self) -> int:
        raise NotImplementedError

    def take(self, pos: np.ndarray) -> "Column":
        raise NotImplementedError

    def missing(self) -> np.ndarray:
        return np.zeros(len(self), dtype=bool)

    def n_missing(self) -> int:
        return int(self.missing().sum())

    def equals(self, other: "Column") -> bool:
        raise NotImplementedError


class NumericColumn(Column):
    kind = "numeric"

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("numeric column must be one-dimensional")

    def __len__(self):
        return len(self.values)

    def take(self, pos):
        return NumericColumn(self.values[pos])

    def missing(self):
        return np.isnan(self.values)

    def equals(self, other):
        return (isinstance(other, NumericColumn)
                and np.array_equal(self.values, other.values, equal_nan=True))

    def __repr__(self):
        return f"NumericColumn(n={len(self)})"


class IntegerColumn(Column):
    """int64 values with an explicit missing mask."""

    kind = "integer"

    def __init__(self, values, mask=None):
        values = np.asarray(values)
        if mask is None:
            if values.dtype.kind == "f":
                mask = np.isnan(values)
                values = np.where(mask, 0, values)
            else:
                mask = np.zeros(values.shape, dtype=bool)
        self.values = np.asarray(values, dtype=np.int64)
        self.mask = np.asarray(mask, dtype=bool)
        self.values[self.mask] = 0
        if self.values.shape != self.mask.shape or self.values.ndim != 1:
            raise ValueError("integer column needs matching one-dimensional values and mask")

    def __len__(self):
        return len(self.values)

    def take(self, pos):
        return IntegerColumn(self.values[pos], self.mask[pos])

    def missing(self):
        return self.mask.copy()

    def as_float(self) -> np.ndarray:
        out = self.values.astype(np.float64)
        out[self.mask] = np.nan
        return out

    def equals(self, other):
        return (isinstance(other, IntegerColumn) and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"IntegerColumn(n={len(self)})"


class FactorColumn(Column):
    """Categorical codes into ``levels``; code -1 marks a missing cell."""

    kind = "factor"

    def __init__(self, codes, levels: Sequence[str]):
        self.codes = np.asarray(codes, dtype=np.int64)
        self.levels = tuple(str(lv) for lv in levels)
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("duplicate factor levels")
        if self.codes.size and (self.codes.min() < -1 or self.codes.max() >= len(self.levels)):
            raise ValueError("factor code out of range")

    @classmethod
    def from_values(cls, values: Iterable, levels: Sequence[str] | None = None) -> "FactorColumn":
        values = list(values)
        if levels is None:
            seen: dict[str, None] = {}
            for v in values:
                if v is not None:
                    seen.setdefault(str(v), None)
            levels = list(seen)
        lookup = {lv: i for i, lv in enumerate(levels)}
        codes = []
        for v in values:
            if v is None:
                codes.append(-1)
            elif str(v) in lookup:
                codes.append(lookup[str(v)])
            else:
                raise ValueError(f"value {v!r} is not one of the levels {list(levels)}")
        return cls(np.array(codes, dtype=np.int64), levels)

    def __len__(self):
        return len(self.codes)

    def take(self, pos):
        return FactorColumn(self.codes[pos], self.levels)

    def missing(self):
        return self.codes < 0

    def to_list(self) -> list:
        return [None if c < 0 else self.levels[c] for c in self.codes]

    def equals(self, other):
        return (isinstance(other, FactorColumn) and self.levels == other.levels
                and np.array_equal(self.codes, other.codes))

    def __repr__(self):
        return f"FactorColumn(n={len(self)}, levels={list(self.levels)})"


def as_column(values) -> Column:
    """Best-effort conversion of raw Python/numpy data to a column."""
    if isinstance(values, Column):
        return values
    arr = np.asarray(values)
    if arr.dtype.kind in "fc":
        return NumericColumn(arr)
    if arr.dtype.kind in "iu":
        return IntegerColumn(arr)
    if arr.dtype.kind == "b":
        return FactorColumn.from_values(["TRUE" if v else "FALSE" for v in arr])
    return FactorColumn.from_values([None if v is None else v for v in values])
