"""CSV ingestion and export of tasks (header row required, UTF-8)."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping

import numpy as np

from .columns import FactorColumn, IntegerColumn, NumericColumn
from .lazy import LazyTensorColumn
from .task import Task

MISSING_TOKENS = ("", "NA")
COLUMN_TYPES = ("numeric", "integer", "factor")


def _infer(values: list[str]) -> str:
    present = [v for v in values if v not in MISSING_TOKENS]
    try:
        for v in present:
            int(v)
        return "integer" if present else "numeric"
    except ValueError:
        pass
    try:
        for v in present:
            float(v)
        return "numeric"
    except ValueError:
        return "factor"


def _parse(name: str, kind: str, values: list[str], line0: int):
    if kind == "factor":
        return FactorColumn.from_values([None if v in MISSING_TOKENS else v for v in values])
    out = []
    for i, v in enumerate(values):
        if v in MISSING_TOKENS:
            out.append(math.nan)
            continue
        try:
            out.append(int(v) if kind == "integer" else float(v))
        except ValueError:
            raise ValueError(f"line {line0 + i}: column {name!r} expects {kind}, got {v!r}") from None
    if kind == "integer":
        mask = np.array([isinstance(x, float) for x in out], dtype=bool)
        return IntegerColumn(np.array([0 if m else x for x, m in zip(out, mask)], dtype=np.int64), mask)
    return NumericColumn(np.array(out, dtype=np.float64))


def read_csv_columns(source, schema: Mapping[str, str] | None = None) -> dict:
    text = Path(source).read_text(encoding="utf-8") if not isinstance(source, io.IOBase) else source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV file")
    header = rows[0]
    if len(set(header)) != len(header):
        raise ValueError("duplicate column names in header")
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValueError(f"line {i + 2}: expected {len(header)} cells, got {len(r)}")
    schema = dict(schema or {})
    unknown = set(schema) - set(header)
    if unknown:
        raise ValueError(f"schema names unknown columns {sorted(unknown)}")
    cols = {}
    for j, name in enumerate(header):
        values = [r[j] for r in body]
        kind = schema.get(name) or _infer(values)
        if kind not in COLUMN_TYPES:
            raise ValueError(f"unknown column type {kind!r} for {name!r}")
        cols[name] = _parse(name, kind, values, 2)
    return cols


def load_csv(path, target: str, task_type: str | None = None, schema: Mapping[str, str] | None = None,
             id: str | None = None, group: str | None = None) -> Task:
    """Read a CSV into a Task.  ``task_type`` defaults to classif for a factor target."""
    cols = read_csv_columns(path, schema)
    if target not in cols:
        raise ValueError(f"target column {target!r} not found")
    if task_type is None:
        task_type = "classif" if isinstance(cols[target], FactorColumn) else "regr"
    if task_type == "classif" and not isinstance(cols[target], FactorColumn):
        cols[target] = FactorColumn.from_values(
            [None if np.isnan(v) else str(int(v) if float(v).is_integer() else v)
             for v in (cols[target].as_float() if isinstance(cols[target], IntegerColumn)
                       else cols[target].values)])
    return Task(id or Path(str(path)).stem, task_type, cols, target, group=group)


def _cell(col, i) -> str:
    if isinstance(col, FactorColumn):
        c = col.codes[i]
        return "NA" if c < 0 else col.levels[c]
    if isinstance(col, IntegerColumn):
        return "NA" if col.mask[i] else str(int(col.values[i]))
    v = col.values[i]
    return "NA" if np.isnan(v) else repr(float(v))


def write_csv(task: Task, path) -> None:
    """Write all non-lazy columns; a factor level spelled ``NA`` would not survive the round trip."""
    names = [n for n, c in task.columns.items() if not isinstance(c, LazyTensorColumn)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(task.nrow):
            w.writerow([_cell(task.columns[n], i) for n in names])


def schema_of(task: Task) -> dict[str, str]:
    return {n: c.kind for n, c in task.columns.items() if not isinstance(c, LazyTensorColumn)}
