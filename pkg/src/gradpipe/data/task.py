"""The Task: typed columns plus target, feature roles and row ids."""

from __future__ import annotations

import copy
from typing import Iterable, Mapping, Sequence

import numpy as np

from .columns import Column, FactorColumn, NumericColumn, IntegerColumn, as_column

TASK_TYPES = ("classif", "regr")


class Task:
    """Columns are stored aligned with ``row_ids``; filtering keeps row order.

    ``valid_task`` optionally carries a held-out task that pipelines
    transform alongside this one.
    """

    def __init__(self, id: str, task_type: str, data: Mapping[str, Column | Sequence],
                 target: str, features: Iterable[str] | None = None, row_ids=None,
                 group: str | None = None):
        if task_type not in TASK_TYPES:
            raise ValueError(f"task_type must be one of {TASK_TYPES}, got {task_type!r}")
        self.id = id
        self.task_type = task_type
        self.columns: dict[str, Column] = {k: as_column(v) for k, v in data.items()}
        lengths = {len(c) for c in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns differ in length")
        n = lengths.pop() if lengths else 0
        if target not in self.columns:
            raise ValueError(f"target column {target!r} missing")
        tcol = self.columns[target]
        if task_type == "classif" and not isinstance(tcol, FactorColumn):
            raise ValueError("a classification target must be categorical")
        if task_type == "regr" and not isinstance(tcol, (NumericColumn, IntegerColumn)):
            raise ValueError("a regression target must be numeric")
        if task_type == "regr" and isinstance(tcol, IntegerColumn):
            self.columns[target] = NumericColumn(tcol.as_float())
        if group is not None and group not in self.columns:
            raise ValueError(f"group column {group!r} missing")
        self.target = target
        self.group_column = group
        if features is None:
            features = [k for k in self.columns if k not in (target, group)]
        self.feature_names = tuple(features)
        for f in self.feature_names:
            if f not in self.columns:
                raise ValueError(f"feature {f!r} missing")
        if target in self.feature_names:
            raise ValueError("the target cannot be a feature")
        self.row_ids = (np.arange(n, dtype=np.int64) if row_ids is None
                        else np.asarray(row_ids, dtype=np.int64))
        if len(self.row_ids) != n:
            raise ValueError("row_ids must match the column length")
        self.valid_task: Task | None = None

    # -- basic properties ------------------------------------------------------
    @property
    def nrow(self) -> int:
        return len(self.row_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def feature_types(self) -> dict[str, str]:
        return {f: self.columns[f].kind for f in self.feature_names}

    @property
    def class_names(self) -> tuple:
        if self.task_type != "classif":
            return ()
        return self.columns[self.target].levels

    @property
    def positive(self) -> str | None:
        names = self.class_names
        return names[0] if len(names) == 2 else None

    def __repr__(self):
        counts: dict[str, int] = {}
        for k in self.feature_types.values():
            counts[k] = counts.get(k, 0) + 1
        kinds = ", ".join(f"{k} ({v})" for k, v in counts.items())
        return (f"<Task:{self.id}> ({self.nrow} x {self.n_features + 1}) {self.task_type}\n"
                f"* Target: {self.target}\n* Features ({self.n_features}): {kinds}")

    # -- data access -----------------------------------------------------------
    def positions(self, rows) -> np.ndarray:
        """Positions of the given row ids in the column storage."""
        rows = np.asarray(rows, dtype=np.int64)
        order = np.argsort(self.row_ids, kind="stable")
        sorted_ids = self.row_ids[order]
        idx = np.searchsorted(sorted_ids, rows)
        idx = np.minimum(idx, len(sorted_ids) - 1) if len(sorted_ids) else idx
        if rows.size and (len(sorted_ids) == 0 or not np.array_equal(sorted_ids[idx], rows)):
            raise KeyError("unknown row ids")
        return order[idx]

    def column(self, name: str, rows=None) -> Column:
        col = self.columns[name]
        return col if rows is None else col.take(self.positions(rows))

    def truth(self, rows=None) -> np.ndarray:
        col = self.column(self.target, rows)
        return col.codes.copy() if isinstance(col, FactorColumn) else col.values.copy()

    def groups(self, rows=None) -> np.ndarray | None:
        if self.group_column is None:
            return None
        col = self.column(self.group_column, rows)
        if isinstance(col, FactorColumn):
            return col.codes.copy()
        return col.values.copy()

    def missings(self, columns: Iterable[str] | None = None) -> dict[str, int]:
        names = self.feature_names if columns is None else columns
        return {n: self.columns[n].n_missing() for n in names}

    # -- derived tasks (copy on write) ----------------------------------------
    def _derive(self, **changes) -> "Task":
        out = copy.copy(self)
        out.valid_task = None
        for k, v in changes.items():
            setattr(out, k, v)
        return out

    def filter(self, rows) -> "Task":
        """Keep only ``rows`` (row ids), preserving the current row order."""
        rows = np.asarray(rows, dtype=np.int64)
        keep = np.isin(self.row_ids, rows)
        if keep.sum() != len(np.unique(rows)):
            raise KeyError("filter received unknown row ids")
        pos = np.flatnonzero(keep)
        return self._derive(columns={k: c.take(pos) for k, c in self.columns.items()},
                            row_ids=self.row_ids[pos])

    def take(self, rows) -> "Task":
        """Subset in the given order; unlike :meth:`filter` duplicates and reordering are allowed."""
        pos = self.positions(rows)
        return self._derive(columns={k: c.take(pos) for k, c in self.columns.items()},
                            row_ids=self.row_ids[pos])

    def select(self, features: Iterable[str]) -> "Task":
        features = tuple(features)
        unknown = [f for f in features if f not in self.feature_names]
        if unknown:
            raise ValueError(f"unknown features {unknown}")
        keep = set(features) | {self.target}
        if self.group_column:
            keep.add(self.group_column)
        return self._derive(columns={k: c for k, c in self.columns.items() if k in keep},
                            feature_names=features)

    def with_columns(self, new: Mapping[str, Column], drop: Iterable[str] = ()) -> "Task":
        """Replace or add feature columns (aligned with the current rows)."""
        drop = set(drop)
        cols = {k: c for k, c in self.columns.items() if k not in drop}
        feats = [f for f in self.feature_names if f not in drop]
        for k, c in new.items():
            if len(c) != self.nrow:
                raise ValueError(f"column {k!r} has {len(c)} rows, task has {self.nrow}")
            if k == self.target:
                raise ValueError("cannot overwrite the target")
            cols[k] = c
            if k not in feats:
                feats.append(k)
        return self._derive(columns=cols, feature_names=tuple(feats))

    def append_rows(self, positions, new_ids) -> "Task":
        """Concatenate copies of existing rows (by storage position) under new ids."""
        positions = np.asarray(positions, dtype=np.int64)
        new_ids = np.asarray(new_ids, dtype=np.int64)
        allpos = np.concatenate([np.arange(self.nrow), positions])
        ids = np.concatenate([self.row_ids, new_ids])
        if len(np.unique(ids)) != len(ids):
            raise ValueError("row ids must stay unique")
        return self._derive(columns={k: c.take(allpos) for k, c in self.columns.items()},
                            row_ids=ids)

    def with_valid(self, valid: "Task | None") -> "Task":
        out = copy.copy(self)
        out.valid_task = valid
        return out

    def rename(self, id: str) -> "Task":
        out = copy.copy(self)
        out.id = id
        return out

    def equals(self, other: "Task") -> bool:
        return (self.task_type == other.task_type and self.target == other.target
                and self.feature_names == other.feature_names
                and np.array_equal(self.row_ids, other.row_ids)
                and self.columns.keys() == other.columns.keys()
                and all(self.columns[k].equals(other.columns[k]) for k in self.columns))
