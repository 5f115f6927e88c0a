"""Typed operator graphs with separate train and predict phases.

A :class:`PipeOp` has typed input and output channels; :class:`Graph`
wires PipeOps into a DAG.  ``a >> b`` connects the free outputs of ``a``
to the free inputs of ``b``; a list on the left fans in.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .data.columns import Column, FactorColumn, IntegerColumn, NumericColumn
from .data.lazy import LazyTensorColumn
from .data.task import Task
from .data.transforms import Flip, Normalize, RandomCrop, Reshape, Resize, Transform
from .paramset import ParamSet, ParamSetCollection, p_dbl, p_fct, p_lgl, p_uty
from .tensor import default_rng, derive_seed

CHANNEL_TYPES = ("Task", "ModelDescriptor", "Prediction", "Null", "Tensor", "*")


class _NoOp:
    """Marker flowing through inactive branch paths."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NO_OP"

    def __reduce__(self):
        return (_NoOp, ())


NO_OP = _NoOp()


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Channel:
    name: str
    train: str
    predict: str

    def __post_init__(self):
        for t in (self.train, self.predict):
            if t not in CHANNEL_TYPES:
                raise ValueError(f"unknown channel type {t!r}")


def compatible(a: str, b: str) -> bool:
    return a == "*" or b == "*" or a == b


def _valid_of(x):
    if isinstance(x, Task):
        return x.valid_task
    task = getattr(x, "task", None)
    if isinstance(task, Task):
        return task.valid_task
    return None


def _attach_valid(out, valid):
    if valid is None or valid is NO_OP:
        return out
    if isinstance(out, Task):
        return out.with_valid(valid)
    if hasattr(out, "with_task") and isinstance(valid, Task):
        return out.with_task(out.task.with_valid(valid))
    return out


class PipeOp:
    input_channels: tuple[Channel, ...] = (Channel("input", "Task", "Task"),)
    output_channels: tuple[Channel, ...] = (Channel("output", "Task", "Task"),)
    accepts_no_op = False
    propagates_validation = True
    kind = "pipeop"

    def __init__(self, id: str, param_set: ParamSet | None = None, **values):
        self.id = id
        self.param_set = param_set if param_set is not None else ParamSet()
        if values:
            self.param_set.set_values(values)
        self.state = None

    def __repr__(self):
        return f"<{type(self).__name__}:{self.id}>"

    @property
    def is_trained(self) -> bool:
        return self.state is not None

    @property
    def values(self) -> dict:
        return self.param_set.get_values()

    def _check_arity(self, inputs):
        if len(inputs) != len(self.input_channels):
            raise ValueError(f"{self.id} expects {len(self.input_channels)} inputs, got {len(inputs)}")

    def train(self, inputs: Sequence) -> list:
        inputs = list(inputs)
        self._check_arity(inputs)
        if not self.accepts_no_op and all(x is NO_OP for x in inputs):
            self.state = NO_OP
            return [NO_OP] * len(self.output_channels)
        outputs = list(self._train(inputs))
        if self.state is None:
            self.state = {}
        if len(outputs) != len(self.output_channels):
            raise PipelineError(f"{self.id} produced {len(outputs)} outputs, declared {len(self.output_channels)}")
        if self.propagates_validation:
            outputs = self._propagate_valid(inputs, outputs)
        return outputs

    def _propagate_valid(self, inputs, outputs):
        valids = [_valid_of(x) for x in inputs]
        if all(v is None for v in valids):
            return outputs
        real = [(x, v) for x, v in zip(inputs, valids) if x is not NO_OP]
        if any(v is None for x, v in real if isinstance(x, Task) or hasattr(x, "task")):
            raise PipelineError(f"{self.id}: validation data present on only some inputs")
        v_in = [NO_OP if x is NO_OP else v for x, v in zip(inputs, valids)]
        v_out = self._predict(v_in) if not all(x is NO_OP for x in v_in) else v_in
        return [_attach_valid(o, v) for o, v in zip(outputs, v_out)]

    def predict(self, inputs: Sequence) -> list:
        inputs = list(inputs)
        self._check_arity(inputs)
        if self.state is None:
            raise PipelineError(f"{self.id}: predict called before train")
        if not self.accepts_no_op and all(x is NO_OP for x in inputs):
            return [NO_OP] * len(self.output_channels)
        return list(self._predict(inputs))

    def _train(self, inputs: list) -> list:
        raise NotImplementedError

    def _predict(self, inputs: list) -> list:
        raise NotImplementedError

    def clone(self) -> "PipeOp":
        return copy.deepcopy(self)

    def __rshift__(self, other):
        return concat(self, other)

    def __rrshift__(self, other):
        return concat(other, self)


class PipeOpNOP(PipeOp):
    input_channels = (Channel("input", "*", "*"),)
    output_channels = (Channel("output", "*", "*"),)
    kind = "nop"

    def __init__(self, id: str = "nop"):
        super().__init__(id)

    def _train(self, inputs):
        return inputs

    def _predict(self, inputs):
        return inputs


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class Edge:
    src_id: str
    src_channel: str
    dst_id: str
    dst_channel: str


class Graph:
    def __init__(self):
        self.pipeops: dict[str, PipeOp] = {}
        self.edges: list[Edge] = []

    # -- construction ----------------------------------------------------------
    def add_pipeop(self, op: PipeOp) -> "Graph":
        if op.id in self.pipeops:
            raise ValueError(f"PipeOp id {op.id!r} already present")
        self.pipeops[op.id] = op
        return self

    def _channel(self, op: PipeOp, name, which: str) -> Channel:
        chans = op.input_channels if which == "input" else op.output_channels
        if name is None:
            if len(chans) != 1:
                raise ValueError(f"{op.id} has several {which} channels; name one")
            return chans[0]
        for c in chans:
            if c.name == name:
                return c
        raise ValueError(f"{op.id} has no {which} channel {name!r}")

    def add_edge(self, src_id: str, dst_id: str, src_channel: str | None = None,
                 dst_channel: str | None = None) -> "Graph":
        src, dst = self.pipeops[src_id], self.pipeops[dst_id]
        sc = self._channel(src, src_channel, "output")
        dc = self._channel(dst, dst_channel, "input")
        if any(e.dst_id == dst_id and e.dst_channel == dc.name for e in self.edges):
            raise ValueError(f"input {dst_id}.{dc.name} already connected")
        if not (compatible(sc.train, dc.train) and compatible(sc.predict, dc.predict)):
            raise TypeError(f"cannot connect {src_id}.{sc.name} ({sc.train}/{sc.predict}) "
                            f"to {dst_id}.{dc.name} ({dc.train}/{dc.predict})")
        if src_id == dst_id or dst_id in self._ancestors(src_id):
            raise ValueError(f"edge {src_id} -> {dst_id} would create a cycle")
        self.edges.append(Edge(src_id, sc.name, dst_id, dc.name))
        return self

    def _ancestors(self, node: str) -> set:
        seen, stack = set(), [node]
        while stack:
            n = stack.pop()
            for e in self.edges:
                if e.dst_id == n and e.src_id not in seen:
                    seen.add(e.src_id)
                    stack.append(e.src_id)
        return seen

    def _absorb(self, other: "Graph") -> dict[str, str]:
        """Move the ops of ``other`` into this graph, renaming clashing ids."""
        mapping = {}
        for op_id, op in other.pipeops.items():
            new = op_id
            if new in self.pipeops:
                k = 1
                while f"{op_id}_{k}" in self.pipeops or f"{op_id}_{k}" in other.pipeops:
                    k += 1
                new = f"{op_id}_{k}"
            op.id = new
            mapping[op_id] = new
            self.pipeops[new] = op
        for e in other.edges:
            self.edges.append(Edge(mapping[e.src_id], e.src_channel, mapping[e.dst_id], e.dst_channel))
        return mapping

    # -- introspection ---------------------------------------------------------
    def ids(self) -> list[str]:
        return list(self.pipeops)

    @property
    def input(self) -> list[tuple[str, Channel]]:
        taken = {(e.dst_id, e.dst_channel) for e in self.edges}
        return [(i, c) for i, op in self.pipeops.items() for c in op.input_channels
                if (i, c.name) not in taken]

    @property
    def output(self) -> list[tuple[str, Channel]]:
        used = {(e.src_id, e.src_channel) for e in self.edges}
        return [(i, c) for i, op in self.pipeops.items() for c in op.output_channels
                if (i, c.name) not in used]

    def topo_order(self) -> list[str]:
        """Topological order; ties go to the op inserted first."""
        preds = {i: {e.src_id for e in self.edges if e.dst_id == i} for i in self.pipeops}
        done: list[str] = []
        remaining = list(self.pipeops)
        while remaining:
            for i in remaining:
                if preds[i] <= set(done):
                    done.append(i)
                    remaining.remove(i)
                    break
            else:  # pragma: no cover - add_edge prevents cycles
                raise ValueError("graph contains a cycle")
        return done

    @property
    def param_set(self) -> ParamSetCollection:
        return ParamSetCollection({i: op.param_set for i, op in self.pipeops.items()})

    @property
    def is_trained(self) -> bool:
        return all(op.is_trained for op in self.pipeops.values())

    def describe(self) -> str:
        lines = [f"Graph with {len(self.pipeops)} PipeOps:"]
        for i in self.topo_order():
            op = self.pipeops[i]
            ins = ",".join(f"{c.name}:{c.train}/{c.predict}" for c in op.input_channels)
            outs = ",".join(f"{c.name}:{c.train}/{c.predict}" for c in op.output_channels)
            lines.append(f"  {i} <{type(op).__name__}> in[{ins}] out[{outs}]")
        lines.append("Edges:")
        for e in self.edges:
            lines.append(f"  {e.src_id}.{e.src_channel} -> {e.dst_id}.{e.dst_channel}")
        return "\n".join(lines)

    def __repr__(self):
        return self.describe()

    # -- execution -------------------------------------------------------------
    def train(self, input, single_input: bool = True) -> list:
        return self._run("train", input, single_input)

    def predict(self, input, single_input: bool = True) -> list:
        return self._run("predict", input, single_input)

    def _run(self, phase: str, input, single_input: bool) -> list:
        free_in = self.input
        if single_input:
            values = [input] * len(free_in)
        else:
            values = list(input)
            if len(values) != len(free_in):
                raise ValueError(f"graph has {len(free_in)} free inputs, got {len(values)} values")
        slot = {(i, c.name): v for (i, c), v in zip(free_in, values)}
        incoming = {(e.dst_id, e.dst_channel): (e.src_id, e.src_channel) for e in self.edges}
        produced: dict[tuple[str, str], Any] = {}
        for op_id in self.topo_order():
            op = self.pipeops[op_id]
            args = []
            for c in op.input_channels:
                key = (op_id, c.name)
                args.append(produced[incoming[key]] if key in incoming else slot[key])
            try:
                outs = op.train(args) if phase == "train" else op.predict(args)
            except Exception as err:
                raise _with_op(err, op_id) from err
            for c, v in zip(op.output_channels, outs):
                produced[(op_id, c.name)] = v
        return [produced[(i, c.name)] for i, c in self.output]

    def clone(self) -> "Graph":
        return copy.deepcopy(self)

    def __rshift__(self, other):
        return concat(self, other)

    def __rrshift__(self, other):
        return concat(other, self)


def _with_op(err: Exception, op_id: str) -> Exception:
    if getattr(err, "pipeop_id", None) is not None:
        return err
    try:
        new = type(err)(f"PipeOp {op_id!r}: {err}")
    except Exception:
        new = PipelineError(f"PipeOp {op_id!r}: {err}")
    new.pipeop_id = op_id
    return new


def as_graph(x, clone: bool = True) -> Graph:
    if isinstance(x, Graph):
        return x.clone() if clone else x
    if isinstance(x, PipeOp):
        return Graph().add_pipeop(x.clone() if clone else x)
    if isinstance(x, (list, tuple)):
        return gunion(x, clone)
    raise TypeError(f"cannot convert {type(x).__name__} to a Graph")


def gunion(items: Iterable, clone: bool = True) -> Graph:
    g = Graph()
    for it in items:
        g._absorb(as_graph(it, clone))
    return g


def concat(a, b) -> Graph:
    """Connect free outputs of ``a`` to free inputs of ``b`` (positional, or one-to-all)."""
    g = as_graph(a)
    h = as_graph(b)
    outs = g.output
    ins = h.input
    mapping = g._absorb(h)
    ins = [(mapping[i], c) for i, c in ins]
    if len(outs) == len(ins):
        pairs = list(zip(outs, ins))
    elif len(outs) == 1:
        pairs = [(outs[0], x) for x in ins]
    else:
        raise ValueError(f"cannot connect {len(outs)} outputs to {len(ins)} inputs")
    for (si, sc), (di, dc) in pairs:
        g.add_edge(si, di, sc.name, dc.name)
    return g


# ---------------------------------------------------------------------------
# branching


class PipeOpBranch(PipeOp):
    input_channels = (Channel("input", "*", "*"),)
    kind = "branch"

    def __init__(self, options: Sequence[str], id: str = "branch", **values):
        options = list(options)
        if not options or len(set(options)) != len(options):
            raise ValueError("branch options must be unique and non-empty")
        self.output_channels = tuple(Channel(o, "*", "*") for o in options)
        ps = ParamSet([p_fct("selection", options, default=options[0])])
        super().__init__(id, ps, **values)

    def _route(self, inputs):
        sel = self.param_set.get("selection")
        return [inputs[0] if c.name == sel else NO_OP for c in self.output_channels]

    def _train(self, inputs):
        self.state = {"selection": self.param_set.get("selection")}
        return self._route(inputs)

    def _predict(self, inputs):
        return self._route(inputs)


class PipeOpUnbranch(PipeOp):
    output_channels = (Channel("output", "*", "*"),)
    accepts_no_op = True
    kind = "unbranch"

    def __init__(self, options: Sequence[str], id: str = "unbranch"):
        self.input_channels = tuple(Channel(o, "*", "*") for o in options)
        super().__init__(id)

    def _pick(self, inputs):
        live = [x for x in inputs if x is not NO_OP]
        if len(live) > 1:
            raise PipelineError(f"{self.id} received {len(live)} active inputs")
        return [live[0] if live else NO_OP]

    def _train(self, inputs):
        self.state = {}
        return self._pick(inputs)

    def _predict(self, inputs):
        return self._pick(inputs)


def branch(paths: Mapping[str, PipeOp | Graph], id: str = "branch", **values) -> Graph:
    """Alternative paths; only the one named by ``<id>.selection`` executes."""
    names = list(paths)
    for name, p in paths.items():
        g = as_graph(p, clone=False)
        if len(g.input) != 1 or len(g.output) != 1:
            raise ValueError(f"branch path {name!r} must have exactly one input and one output")
    return PipeOpBranch(names, id, **values) >> list(paths.values()) >> PipeOpUnbranch(names, "unbranch")


# ---------------------------------------------------------------------------
# task preprocessing


class PipeOpTaskPreproc(PipeOp):
    """Task in, task out; subclasses override ``_train_task`` / ``_predict_task``."""

    def _train(self, inputs):
        self.state = {}
        return [self._train_task(inputs[0])]

    def _predict(self, inputs):
        return [self._predict_task(inputs[0])]

    def _train_task(self, task: Task) -> Task:
        raise NotImplementedError

    def _predict_task(self, task: Task) -> Task:
        raise NotImplementedError


def selector_type(types) -> Callable[[Task], list]:
    types = {types} if isinstance(types, str) else set(types)
    aliases = {"int": "integer", "dbl": "numeric", "fct": "factor", "lt": "lazy_tensor",
               "lazy": "lazy_tensor"}
    types = {aliases.get(t, t) for t in types}

    def select(task):
        return [f for f, k in task.feature_types.items() if k in types]

    select.description = f"selector_type({sorted(types)})"
    return select


def selector_name(names) -> Callable[[Task], list]:
    names = [names] if isinstance(names, str) else list(names)

    def select(task):
        return [n for n in names if n in task.feature_names]

    select.description = f"selector_name({names})"
    return select


def selector_all() -> Callable[[Task], list]:
    def select(task):
        return list(task.feature_names)

    select.description = "selector_all()"
    return select


class PipeOpSelect(PipeOpTaskPreproc):
    kind = "select"

    def __init__(self, id: str = "select", **values):
        ps = ParamSet([p_uty("selector", default=selector_all(),
                             custom_check=lambda v: None if callable(v) else "selector must be callable")])
        super().__init__(id, ps, **values)

    def _train_task(self, task):
        chosen = self.param_set.get("selector")(task)
        self.state = {"features": list(chosen)}
        return task.select(chosen)

    def _predict_task(self, task):
        return task.select(self.state["features"])


class PipeOpEncode(PipeOpTaskPreproc):
    """One-hot encoding of factor features into ``<col>.<level>`` indicators."""

    kind = "encode"

    def __init__(self, id: str = "encode", **values):
        ps = ParamSet([p_fct("method", ["one-hot", "treatment"], default="one-hot")])
        super().__init__(id, ps, **values)

    def _encode(self, task):
        method = self.param_set.get("method")
        new = {}
        for name, levels in self.state["levels"].items():
            col = task.columns[name]
            lookup = {lv: i for i, lv in enumerate(levels)}
            remap = np.empty(len(col.levels) + 1, dtype=np.int64)
            present = np.unique(col.codes[col.codes >= 0])
            for i, lv in enumerate(col.levels):
                if lv in lookup:
                    remap[i] = lookup[lv]
                elif i in present:
                    raise ValueError(f"level {lv!r} of {name!r} was not seen during training")
                else:
                    remap[i] = -1
            remap[-1] = -1
            codes = remap[col.codes]
            keep = levels if method == "one-hot" else levels[1:]
            for lv in keep:
                vals = (codes == lookup[lv]).astype(np.float64)
                vals[codes < 0] = np.nan
                new[f"{name}.{lv}"] = NumericColumn(vals)
        return task.with_columns(new, drop=self.state["levels"].keys())

    def _train_task(self, task):
        self.state = {"levels": {f: task.columns[f].levels for f, k in task.feature_types.items()
                                 if k == "factor"}}
        return self._encode(task)

    def _predict_task(self, task):
        return self._encode(task)


class PipeOpImputeHist(PipeOpTaskPreproc):
    """Fill missing numeric/integer cells by sampling observed training values."""

    kind = "imputehist"

    def __init__(self, id: str = "imputehist", **values):
        super().__init__(id, ParamSet(), **values)

    def _impute(self, task, seed):
        new = {}
        for j, (name, pool) in enumerate(self.state["pools"].items()):
            col = task.columns[name]
            miss = col.missing()
            if not miss.any():
                continue
            gen = np.random.Generator(np.random.Philox(key=derive_seed(seed, j)))
            draws = pool[gen.integers(0, len(pool), int(miss.sum()))]
            if isinstance(col, IntegerColumn):
                vals = col.values.copy()
                vals[miss] = draws.astype(np.int64)
                new[name] = IntegerColumn(vals, np.zeros(len(vals), dtype=bool))
            else:
                vals = col.values.copy()
                vals[miss] = draws
                new[name] = NumericColumn(vals)
        return task.with_columns(new) if new else task

    def _train_task(self, task):
        pools = {}
        for f, k in task.feature_types.items():
            if k not in ("numeric", "integer"):
                continue
            col = task.columns[f]
            obs = (col.values[~col.missing()]).astype(np.float64)
            if obs.size == 0:
                raise ValueError(f"feature {f!r} has no observed values to sample from")
            pools[f] = obs
        seed = int(default_rng().generator().integers(0, 2**63 - 1))
        self.state = {"pools": pools, "seed": seed}
        return self._impute(task, derive_seed(seed, 0))

    def _predict_task(self, task):
        return self._impute(task, derive_seed(self.state["seed"], 1))


class PipeOpClassBalancing(PipeOpTaskPreproc):
    """Train-time resampling of class counts relative to a reference class."""

    kind = "classbalancing"

    def __init__(self, id: str = "classbalancing", **values):
        ps = ParamSet([
            p_dbl("ratio", 0, None, default=1.0),
            p_fct("reference", ["minor", "major"], default="minor"),
            p_fct("adjust", ["minor", "major", "all"], default="minor"),
        ])
        super().__init__(id, ps, **values)

    def _train_task(self, task):
        if task.task_type != "classif":
            raise TypeError("class balancing needs a classification task")
        v = self.param_set.get_values()
        ratio, reference, adjust = v["ratio"], v["reference"], v["adjust"]
        if ratio < 1 and adjust == "minor":
            raise ValueError("ratio < 1 with adjust='minor' would downsample the minority class")
        y = task.truth()
        k = len(task.class_names)
        counts = np.bincount(y[y >= 0], minlength=k)
        present = [c for c in range(k) if counts[c] > 0]
        minor = min(present, key=lambda c: counts[c])
        major = max(present, key=lambda c: counts[c])
        ref = counts[minor if reference == "minor" else major]
        target = int(round(ratio * ref))
        adjusted = {"minor": [minor], "major": [major], "all": present}[adjust]
        gen = default_rng().generator()
        keep = np.ones(task.nrow, dtype=bool)
        extra = []
        for c in adjusted:
            rows = np.flatnonzero(y == c)
            if target > len(rows):
                extra.append(gen.choice(rows, target - len(rows), replace=True))
            elif target < len(rows):
                drop = gen.choice(rows, len(rows) - target, replace=False)
                keep[drop] = False
        self.state = {"counts": counts.tolist(), "target": target}
        out = task
        if extra:
            pos = np.concatenate(extra)
            start = int(task.row_ids.max()) + 1 if task.nrow else 0
            valid = task.valid_task
            if valid is not None and valid.nrow:
                start = max(start, int(valid.row_ids.max()) + 1)
            out = out.append_rows(pos, np.arange(start, start + len(pos)))
        if not keep.all():
            out = out.filter(np.concatenate([task.row_ids[keep], out.row_ids[task.nrow:]]))
        return out

    def _predict_task(self, task):
        return task


def _columns_equal(a: Column, b: Column) -> bool:
    return a is b or a.equals(b)


def feature_union(tasks: Sequence[Task]) -> Task:
    """Union of feature columns; duplicate names must carry identical content."""
    tasks = [t for t in tasks if t is not NO_OP]
    if not tasks:
        raise ValueError("feature union of nothing")
    base = tasks[0]
    new: dict[str, Column] = {}
    for t in tasks[1:]:
        if t.target != base.target or not np.array_equal(t.row_ids, base.row_ids):
            raise ValueError("feature union needs identical rows and target")
        for f in t.feature_names:
            col = t.columns[f]
            prior = base.columns.get(f) if f in base.feature_names else new.get(f)
            if prior is not None:
                if not _columns_equal(prior, col):
                    raise ValueError(f"conflicting content for feature {f!r}")
                continue
            new[f] = col
    return base.with_columns(new) if new else base


class PipeOpFeatureUnion(PipeOp):
    output_channels = (Channel("output", "Task", "Task"),)
    kind = "featureunion"

    def __init__(self, n_inputs: int = 2, id: str = "featureunion"):
        self.input_channels = tuple(Channel(f"input{i + 1}", "Task", "Task") for i in range(n_inputs))
        super().__init__(id)

    def _train(self, inputs):
        self.state = {}
        return [feature_union(inputs)]

    def _predict(self, inputs):
        return [feature_union(inputs)]


# ---------------------------------------------------------------------------
# lazy tensor transforms and augmentation


class PipeOpLazyTransform(PipeOpTaskPreproc):
    """Append a transform to every lazy tensor feature.

    Augmentations are train-only: they are appended to the training task and
    the predict phase leaves the data unchanged.
    """

    augment = False
    kind = "lazy_transform"

    def make_transform(self) -> Transform:
        raise NotImplementedError

    def _apply(self, task):
        t = self.make_transform()
        new = {f: task.columns[f].append(t) for f, k in task.feature_types.items() if k == "lazy_tensor"}
        return task.with_columns(new) if new else task

    def _train_task(self, task):
        self.state = {}
        return self._apply(task)

    def _predict_task(self, task):
        return task if self.augment else self._apply(task)


class PipeOpTrafoReshape(PipeOpLazyTransform):
    kind = "trafo_reshape"

    def __init__(self, id: str = "trafo_reshape", **values):
        super().__init__(id, ParamSet([p_uty("shape")]), **values)

    def make_transform(self):
        return Reshape(tuple(self.param_set.get("shape")))


class PipeOpTrafoResize(PipeOpLazyTransform):
    kind = "trafo_resize"

    def __init__(self, id: str = "trafo_resize", **values):
        super().__init__(id, ParamSet([p_uty("size")]), **values)

    def make_transform(self):
        return Resize(tuple(self.param_set.get("size")))


class PipeOpTrafoNormalize(PipeOpLazyTransform):
    kind = "trafo_normalize"

    def __init__(self, id: str = "trafo_normalize", **values):
        super().__init__(id, ParamSet([p_uty("mean"), p_uty("std")]), **values)

    def make_transform(self):
        return Normalize(tuple(self.param_set.get("mean")), tuple(self.param_set.get("std")))


class PipeOpAugmentFlip(PipeOpLazyTransform):
    augment = True

    def __init__(self, axis: str, id: str | None = None, **values):
        self.axis = axis
        self.kind = f"augment_random_{axis}_flip"
        super().__init__(id or self.kind, ParamSet([p_dbl("p", 0, 1, default=0.5)]), **values)

    def make_transform(self):
        return Flip(self.axis, self.param_set.get("p"))


class PipeOpAugmentRandomCrop(PipeOpLazyTransform):
    augment = True
    kind = "augment_random_crop"

    def __init__(self, id: str = "augment_random_crop", **values):
        ps = ParamSet([p_uty("size"), p_lgl("pad_if_needed", default=False)])
        super().__init__(id, ps, **values)

    def make_transform(self):
        return RandomCrop(tuple(self.param_set.get("size")), self.param_set.get("pad_if_needed"))


PIPEOPS: dict[str, Callable[..., PipeOp]] = {
    "nop": PipeOpNOP,
    "select": PipeOpSelect,
    "encode": PipeOpEncode,
    "imputehist": PipeOpImputeHist,
    "classbalancing": PipeOpClassBalancing,
    "featureunion": PipeOpFeatureUnion,
    "trafo_reshape": PipeOpTrafoReshape,
    "trafo_resize": PipeOpTrafoResize,
    "trafo_normalize": PipeOpTrafoNormalize,
    "augment_random_horizontal_flip": lambda id=None, **kw: PipeOpAugmentFlip("horizontal", id, **kw),
    "augment_random_vertical_flip": lambda id=None, **kw: PipeOpAugmentFlip("vertical", id, **kw),
    "augment_random_crop": PipeOpAugmentRandomCrop,
}
