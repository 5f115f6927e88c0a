"""Networks as graphs.

A *module graph* wires instantiated layers (:class:`PipeOpModule`) and runs
tensors through them.  A *generating graph* of :class:`PipeOpTorch`
operators builds a module graph while it is trained on a Task: each operator
reads the current output shape from the :class:`ModelDescriptor`, infers the
missing layer sizes, attaches a layer and moves the pointer.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import pipeline as pl
from .data.columns import FactorColumn
from .data.loading import factor_features, lazy_features, numeric_features
from .data.task import Task
from .functional import conv_output_extent
from .learner import (IngressSpec, IngressToken, LearnerTorchModel, resolve_ingress,
                      training_param_set)
from .nn import (BatchNorm2d, Conv2d, Dropout, Flatten, Identity, Linear, MaxPool2d, Module, ReLU,
                 Sigmoid, TokenizerCateg, TokenizerNum)
from .paramset import ParamSet, ParamSetCollection, p_dbl, p_fct, p_int, p_lgl, p_uty
from .pipeline import NO_OP, Channel, Graph, PipelineError, PipeOp, feature_union
from .tensor import Tensor, concat
from .torchconf import TorchCallback, TorchLoss, TorchOptimizer, as_callbacks, as_loss, as_optimizer

UNKNOWN = None


def format_shape(shape) -> str:
    if shape is None:
        return "?"
    return "(" + ",".join("NA" if s is None else str(s) for s in shape) + ")"


def _require(shape, rank: int | None, what: str) -> tuple:
    if shape is None:
        raise ValueError(f"{what}: input shape unknown")
    if rank is not None and len(shape) != rank:
        raise ValueError(f"{what} expects a rank-{rank} input, got {format_shape(shape)}")
    if any(s is None for s in shape[1:]):
        raise ValueError(f"{what} needs concrete extents beyond the batch slot, got {format_shape(shape)}")
    return tuple(shape)


# ---------------------------------------------------------------------------
# module graphs


class MergeSum(Module):
    def forward(self, *xs):
        out = xs[0]
        for x in xs[1:]:
            if x.shape != out.shape:
                raise ValueError(f"merge_sum got shapes {out.shape} and {x.shape}")
            out = out + x
        return out


class MergeCat(Module):
    def __init__(self, axis: int):
        super().__init__()
        self.axis = int(axis)

    def forward(self, *xs):
        return concat(list(xs), axis=self.axis)

    def extra_repr(self):
        return f"axis={self.axis}"


class PipeOpModule(PipeOp):
    """A graph node wrapping an instantiated layer; tensors in, tensor out."""

    output_channels = (Channel("output", "Tensor", "Tensor"),)
    propagates_validation = False
    kind = "module"

    def __init__(self, id: str = "module", module: Module | None = None, n_inputs: int = 1,
                 layer: str = "module", hyper: dict | None = None, shape=None):
        if module is None:
            raise ValueError("PipeOpModule needs a module")
        self.module = module
        self.layer = layer
        self.hyper = dict(hyper or {})
        self.shape = None if shape is None else tuple(shape)
        if n_inputs == 1:
            self.input_channels = (Channel("input", "Tensor", "Tensor"),)
        else:
            self.input_channels = tuple(Channel(f"in{i + 1}", "Tensor", "Tensor") for i in range(n_inputs))
        super().__init__(id)

    def _train(self, inputs):
        self.state = {}
        return [self.module(*inputs)]

    def _predict(self, inputs):
        return [None]


def describe_module_graph(graph: Graph) -> str:
    """One line per node: id, layer kind, inferred hyperparameters and output shape."""
    lines = []
    for i in graph.topo_order():
        op = graph.pipeops[i]
        hyper = ", ".join(f"{k}={v}" for k, v in op.hyper.items())
        srcs = [f"{e.src_id}" for e in graph.edges if e.dst_id == i]
        frm = f" <- {', '.join(srcs)}" if srcs else ""
        lines.append(f"{i} [{op.layer}]({hyper}) -> {format_shape(op.shape)}{frm}")
    return "\n".join(lines)


class NetworkModule(Module):
    """A module graph collapsed into one callable network.

    Call with a dict of named input tensors, keyword arguments, or
    positional tensors in the order of :attr:`input_names`.
    """

    takes_named_inputs = True

    def __init__(self, graph: Graph, shapes_in: dict, output: tuple[str, str] | None = None):
        super().__init__()
        free = [f"{i}.{c.name}" for i, c in graph.input]
        missing = [n for n in free if n not in shapes_in]
        if missing:
            raise ValueError(f"missing input shapes for {missing}")
        self.input_names = tuple(free)
        self.shapes_in = {n: tuple(shapes_in[n]) for n in free}
        if output is None:
            outs = graph.output
            if len(outs) != 1:
                raise ValueError(f"module graph has {len(outs)} free outputs; name the output")
            output = (outs[0][0], outs[0][1].name)
        self.output = tuple(output)
        order = graph.topo_order()
        incoming = {(e.dst_id, e.dst_channel): (e.src_id, e.src_channel) for e in graph.edges}
        self.plan = []
        for node in order:
            op = graph.pipeops[node]
            args = []
            for c in op.input_channels:
                key = (node, c.name)
                args.append(("edge", incoming[key]) if key in incoming else ("input", f"{node}.{c.name}"))
            self.plan.append((node, args))
            self.add_module(node, op.module)

    def _gather(self, args, kwargs) -> dict:
        if len(args) == 1 and isinstance(args[0], dict):
            inputs = dict(args[0])
        else:
            if len(args) > len(self.input_names):
                raise ValueError(f"network takes {len(self.input_names)} inputs, got {len(args)}")
            inputs = dict(zip(self.input_names, args))
        inputs.update(kwargs)
        for n in self.input_names:
            if n not in inputs:
                raise ValueError(f"missing network input {n!r}")
            x = inputs[n]
            x = x if isinstance(x, Tensor) else Tensor(x)
            want = self.shapes_in[n]
            if x.ndim != len(want) or any(w is not None and w != s for w, s in zip(want, x.shape)):
                raise ValueError(f"input {n!r} has shape {x.shape}, expected {format_shape(want)}")
            inputs[n] = x
        return inputs

    def forward(self, *args, **kwargs):
        inputs = self._gather(args, kwargs)
        produced = {}
        modules = self._modules
        for node, spec in self.plan:
            xs = [produced[src] if kind == "edge" else inputs[src] for kind, src in spec]
            produced[(node, "output")] = modules[node](*xs)
        return produced[self.output]


def collapse(x, shapes_in: dict | None = None) -> Module:
    """Turn a ModelDescriptor or a module graph into a single network."""
    if isinstance(x, ModelDescriptor):
        shapes = {name: spec.shape for name, spec in x.ingress.items()}
        return NetworkModule(x.graph, shapes, x.pointer)
    if not isinstance(x, Graph):
        raise TypeError("collapse needs a ModelDescriptor or a module Graph")
    if shapes_in is None:
        raise ValueError("input shapes are required")
    if len(x.pipeops) == 1:
        (i, c), = x.input
        if f"{i}.{c.name}" not in shapes_in:
            raise ValueError(f"missing input shape for {i}.{c.name}")
        return next(iter(x.pipeops.values())).module
    return NetworkModule(x, shapes_in)


nn_graph = collapse


# ---------------------------------------------------------------------------
# descriptors


@dataclass
class ModelDescriptor:
    """State passed between generating operators during training."""

    graph: Graph
    task: Task
    ingress: dict
    pointer: tuple | None = None
    pointer_shape: tuple | None = None
    loss: TorchLoss | None = None
    optimizer: TorchOptimizer | None = None
    callbacks: list = field(default_factory=list)

    def with_task(self, task: Task) -> "ModelDescriptor":
        return replace(self, task=task)

    def __repr__(self):
        ing = ", ".join(f"{n}: [{format_shape(s.shape)}]" for n, s in self.ingress.items())
        cbs = ",".join(c.id for c in self.callbacks) if self.callbacks else "N/A"
        ptr = "N/A" if self.pointer is None else f"{self.pointer[0]}.{self.pointer[1]} [{format_shape(self.pointer_shape)}]"
        return "\n".join([
            f"<ModelDescriptor: {len(self.graph.pipeops)} ops>",
            f"* Ingress:  {ing}",
            f"* Task:  {self.task.id} [{self.task.task_type}]",
            f"* Callbacks:  {cbs}",
            f"* Optimizer:  {self.optimizer.kind if self.optimizer else 'N/A'}",
            f"* Loss:  {self.loss.kind if self.loss else 'N/A'}",
            f"* pointer:  {ptr}",
        ])

    def describe_network(self) -> str:
        return describe_module_graph(self.graph)


def _pick_config(mds, attr):
    vals = [getattr(m, attr) for m in mds if getattr(m, attr)]
    if not vals:
        return [] if attr == "callbacks" else None
    first = vals[0]
    if any(v is not first for v in vals[1:]):
        raise PipelineError(f"conflicting {attr} on merged descriptors")
    return first


def union_descriptors(mds: Sequence[ModelDescriptor]) -> tuple[ModelDescriptor, list]:
    """Merge descriptors into one module graph; returns the merged descriptor and each input's pointer."""
    base = mds[0]
    graph = base.graph
    ingress = dict(base.ingress)
    pointers = [(base.pointer, base.pointer_shape)]
    absorbed = {id(graph): {}}
    for md in mds[1:]:
        if id(md.graph) not in absorbed:
            absorbed[id(md.graph)] = graph._absorb(md.graph)
        mapping = absorbed[id(md.graph)]
        for name, spec in md.ingress.items():
            node, chan = name.rsplit(".", 1)
            new = f"{mapping.get(node, node)}.{chan}"
            ingress.setdefault(new, replace(spec, name=new))
        pointers.append(((mapping.get(md.pointer[0], md.pointer[0]), md.pointer[1]), md.pointer_shape))
    task = feature_union([m.task for m in mds])
    merged = ModelDescriptor(graph, task, ingress, base.pointer, base.pointer_shape,
                             _pick_config(mds, "loss"), _pick_config(mds, "optimizer"),
                             _pick_config(mds, "callbacks"))
    return merged, pointers


def _fresh_id(graph: Graph, base: str) -> str:
    if base not in graph.pipeops:
        return base
    k = 1
    while f"{base}_{k}" in graph.pipeops:
        k += 1
    return f"{base}_{k}"


# ---------------------------------------------------------------------------
# generating operators


class PipeOpTorch(PipeOp):
    """Attaches one layer to the descriptor's module graph.

    Subclasses implement ``make(shapes, md) -> (module, output_shape, inferred)``.
    In the predict phase the Task is forwarded unchanged (merges forward the
    feature union of their inputs).
    """

    input_channels = (Channel("input", "ModelDescriptor", "Task"),)
    output_channels = (Channel("output", "ModelDescriptor", "Task"),)
    layer = "torch"
    n_inputs = 1

    def __init__(self, id: str | None = None, param_set: ParamSet | None = None, **values):
        if self.n_inputs > 1:
            self.input_channels = tuple(Channel(f"input{i + 1}", "ModelDescriptor", "Task")
                                        for i in range(self.n_inputs))
        super().__init__(id or self.layer, param_set, **values)

    def make(self, shapes: list, md: ModelDescriptor):
        raise NotImplementedError

    def _train(self, inputs):
        if any(not isinstance(x, ModelDescriptor) for x in inputs):
            raise TypeError(f"{self.id} expects ModelDescriptors in the train phase")
        if len(inputs) == 1:
            md, pointers = inputs[0], [(inputs[0].pointer, inputs[0].pointer_shape)]
        else:
            md, pointers = union_descriptors(inputs)
        shapes = [s for _, s in pointers]
        module, shape, hyper = self.make(shapes, md)
        node = _fresh_id(md.graph, self.id)
        op = PipeOpModule(node, module, len(pointers), self.layer, hyper, shape)
        md.graph.add_pipeop(op)
        for (src, chan), c in zip((p for p, _ in pointers), op.input_channels):
            md.graph.add_edge(src, node, chan, c.name)
        self.state = {"node": node}
        return [replace(md, pointer=(node, "output"), pointer_shape=tuple(shape))]

    def _predict(self, inputs):
        return [inputs[0] if len(inputs) == 1 else feature_union(inputs)]


class PipeOpTorchLinear(PipeOpTorch):
    layer = "linear"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_int("out_features", 1, None, tags=("required",)), p_lgl("bias", default=True)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 2, self.id)
        v = self.values
        if v.get("out_features") is None:
            raise ValueError(f"{self.id}: out_features is required")
        mod = Linear(s[1], v["out_features"], bias=v["bias"])
        return mod, (None, v["out_features"]), {"in_features": s[1], "out_features": v["out_features"]}


class PipeOpTorchHead(PipeOpTorch):
    """Final linear layer; output width is the class count (classification) or 1."""

    layer = "head"

    def __init__(self, id=None, **values):
        super().__init__(id, ParamSet([p_lgl("bias", default=True)]), **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 2, self.id)
        out = len(md.task.class_names) if md.task.task_type == "classif" else 1
        return Linear(s[1], out, bias=self.values["bias"]), (None, out), {"in_features": s[1], "out_features": out}


class _ShapeKeeping(PipeOpTorch):
    factory: Callable[..., Module] = Identity

    def make(self, shapes, md):
        s = shapes[0]
        if s is None:
            raise ValueError(f"{self.id}: input shape unknown")
        return type(self).factory(**self.values), tuple(s), dict(self.values)


class PipeOpTorchReLU(_ShapeKeeping):
    layer = "relu"
    factory = ReLU


class PipeOpTorchSigmoid(_ShapeKeeping):
    layer = "sigmoid"
    factory = Sigmoid


class PipeOpTorchDropout(_ShapeKeeping):
    layer = "dropout"
    factory = Dropout

    def __init__(self, id=None, **values):
        super().__init__(id, ParamSet([p_dbl("p", 0, 1, default=0.5)]), **values)


class PipeOpTorchConv2d(PipeOpTorch):
    layer = "conv2d"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_int("out_channels", 1, None, tags=("required",)),
                       p_int("kernel_size", 1, None, tags=("required",)),
                       p_int("stride", 1, None, default=1), p_int("padding", 0, None, default=0),
                       p_lgl("bias", default=True)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 4, self.id)
        v = self.values
        for k in ("out_channels", "kernel_size"):
            if v.get(k) is None:
                raise ValueError(f"{self.id}: {k} is required")
        h = conv_output_extent(s[2], v["kernel_size"], v["stride"], v["padding"])
        w = conv_output_extent(s[3], v["kernel_size"], v["stride"], v["padding"])
        if h < 1 or w < 1:
            raise ValueError(f"{self.id}: kernel larger than the padded input {format_shape(s)}")
        mod = Conv2d(s[1], v["out_channels"], v["kernel_size"], v["stride"], v["padding"], v["bias"])
        return mod, (None, v["out_channels"], h, w), {"in_channels": s[1], **v}


class PipeOpTorchMaxPool2d(PipeOpTorch):
    layer = "max_pool2d"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_int("kernel_size", 1, None, tags=("required",)), p_int("stride", 1, None, default=None),
                       p_int("padding", 0, None, default=0)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 4, self.id)
        v = self.values
        if v.get("kernel_size") is None:
            raise ValueError(f"{self.id}: kernel_size is required")
        stride = v["stride"] or v["kernel_size"]
        h = conv_output_extent(s[2], v["kernel_size"], stride, v["padding"])
        w = conv_output_extent(s[3], v["kernel_size"], stride, v["padding"])
        mod = MaxPool2d(v["kernel_size"], stride, v["padding"])
        return mod, (None, s[1], h, w), {"kernel_size": v["kernel_size"], "stride": stride, "padding": v["padding"]}


class PipeOpTorchBatchNorm2d(PipeOpTorch):
    layer = "batch_norm2d"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_dbl("eps", 0, None, default=1e-5), p_dbl("momentum", 0, 1, default=0.1)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 4, self.id)
        v = self.values
        return BatchNorm2d(s[1], v["eps"], v["momentum"]), s, {"num_features": s[1], **v}


class PipeOpTorchFlatten(PipeOpTorch):
    layer = "flatten"

    def make(self, shapes, md):
        s = shapes[0]
        if s is None or len(s) < 2:
            raise ValueError(f"{self.id} needs rank >= 2, got {format_shape(s)}")
        _require(s, None, self.id)
        return Flatten(), (None, int(np.prod(s[1:]))), {}


class PipeOpTorchTokenizerNum(PipeOpTorch):
    layer = "tokenizer_num"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_int("d_token", 1, None, tags=("required",)), p_lgl("bias", default=True)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 2, self.id)
        v = self.values
        if v.get("d_token") is None:
            raise ValueError(f"{self.id}: d_token is required")
        mod = TokenizerNum(s[1], v["d_token"], v["bias"])
        return mod, (None, s[1], v["d_token"]), {"n_features": s[1], **v}


class PipeOpTorchTokenizerCateg(PipeOpTorch):
    """Embeds label-encoded factors; cardinalities come from the feeding categorical ingress."""

    layer = "tokenizer_categ"

    def __init__(self, id=None, **values):
        ps = ParamSet([p_int("d_token", 1, None, tags=("required",)), p_lgl("bias", default=True)])
        super().__init__(id, ps, **values)

    def make(self, shapes, md):
        s = _require(shapes[0], 2, self.id)
        v = self.values
        if v.get("d_token") is None:
            raise ValueError(f"{self.id}: d_token is required")
        node = md.pointer[0]
        upstream = md.graph._ancestors(node) | {node}
        specs = [sp for name, sp in md.ingress.items()
                 if sp.assembly == "categorical" and name.rsplit(".", 1)[0] in upstream]
        if len(specs) != 1:
            raise ValueError(f"{self.id} must be fed by exactly one categorical ingress")
        feats = specs[0].features
        if len(feats) != s[1]:
            raise ValueError(f"{self.id}: expected {len(feats)} columns, got {format_shape(s)}")
        card = [len(md.task.columns[f].levels) for f in feats]
        mod = TokenizerCateg(card, v["d_token"], v["bias"])
        return mod, (None, s[1], v["d_token"]), {"cardinalities": tuple(card), **v}


class PipeOpTorchMergeSum(PipeOpTorch):
    layer = "merge_sum"

    def __init__(self, id=None, n_inputs: int = 2, **values):
        self.n_inputs = int(n_inputs)
        super().__init__(id, **values)

    def make(self, shapes, md):
        first = shapes[0]
        if any(s != first for s in shapes[1:]):
            raise ValueError(f"{self.id}: cannot sum shapes {[format_shape(s) for s in shapes]}")
        return MergeSum(), first, {"n_inputs": len(shapes)}


def resolve_dim(dim: int, rank: int) -> int:
    """Axis for a dimension counted from 1 (or from the end when negative)."""
    if dim == 0:
        raise ValueError("dimensions are counted from 1; 0 is not a dimension")
    axis = dim - 1 if dim > 0 else rank + dim
    if not 0 <= axis < rank:
        raise ValueError(f"dimension {dim} out of range for rank {rank}")
    return axis


class PipeOpTorchMergeCat(PipeOpTorch):
    """Concatenation along ``dim`` (1-based; negative counts from the end, default last)."""

    layer = "merge_cat"

    def __init__(self, id=None, n_inputs: int = 2, **values):
        self.n_inputs = int(n_inputs)
        super().__init__(id, ParamSet([p_int("dim", None, None, default=-1)]), **values)

    def make(self, shapes, md):
        first = shapes[0]
        rank = len(first)
        axis = resolve_dim(self.values["dim"], rank)
        if axis == 0:
            raise ValueError(f"{self.id}: cannot concatenate along the batch dimension")
        for s in shapes:
            _require(s, rank, self.id)
            if any(s[i] != first[i] for i in range(rank) if i != axis):
                raise ValueError(f"{self.id}: shapes {[format_shape(x) for x in shapes]} differ off axis {axis}")
        out = list(first)
        out[axis] = sum(s[axis] for s in shapes)
        return MergeCat(axis), tuple(out), {"dim": self.values["dim"], "n_inputs": len(shapes)}


class PipeOpTorchBlock(PipeOpTorch):
    """Repeats a generating segment ``n_blocks`` times, each copy with fresh weights.

    Hyperparameters of the segment are exposed as ``<segment op id>.<name>``.
    """

    layer = "block"

    def __init__(self, block=None, id=None, **values):
        if block is None:
            raise ValueError("block needs a segment graph")
        self.block = pl.as_graph(block, clone=True)
        if len(self.block.input) != 1 or len(self.block.output) != 1:
            raise ValueError("a block segment must have one input and one output")
        self._own = ParamSet([p_int("n_blocks", 1, None, default=1)])
        super().__init__(id, self._own, **values)

    @property
    def param_set(self):
        sets = {"": self._own}
        sets.update({i: op.param_set for i, op in self.block.pipeops.items()})
        return ParamSetCollection(sets)

    @param_set.setter
    def param_set(self, value):
        self._own = value

    def _train(self, inputs):
        md = inputs[0]
        if not isinstance(md, ModelDescriptor):
            raise TypeError(f"{self.id} expects a ModelDescriptor in the train phase")
        for _ in range(self._own.get("n_blocks")):
            out = self.block.clone().train(md)
            if len(out) != 1 or not isinstance(out[0], ModelDescriptor):
                raise PipelineError(f"{self.id}: the segment must map one descriptor to one descriptor")
            md = out[0]
        self.state = {"node": md.pointer[0]}
        return [md]


# -- ingress --------------------------------------------------------------------


class PipeOpTorchIngress(PipeOp):
    """Entry point: starts a descriptor whose module graph has one identity input node."""

    input_channels = (Channel("input", "Task", "Task"),)
    output_channels = (Channel("output", "ModelDescriptor", "Task"),)
    default_id = "torch_ingress"

    def __init__(self, id=None, param_set=None, **values):
        super().__init__(id or self.default_id, param_set, **values)

    def token(self) -> IngressToken:
        raise NotImplementedError

    def _train(self, inputs):
        task = inputs[0]
        name = f"{self.id}.input"
        spec = resolve_ingress(name, self.token(), task)
        graph = Graph()
        graph.add_pipeop(PipeOpModule(self.id, Identity(), 1, "ingress",
                                      {"assembly": spec.assembly, "features": len(spec.features)}, spec.shape))
        self.state = {"features": spec.features}
        return [ModelDescriptor(graph, task, {name: spec}, (self.id, "output"), spec.shape)]

    def _predict(self, inputs):
        return [inputs[0]]


class PipeOpTorchIngressNum(PipeOpTorchIngress):
    """Stacks numeric and integer features into a float tensor (B, F)."""

    default_id = "torch_ingress_num"

    def token(self):
        return IngressToken(lambda t: list(numeric_features(t)), "numeric")


class PipeOpTorchIngressCateg(PipeOpTorchIngress):
    """Label-encodes factor features into an integer tensor (B, F)."""

    default_id = "torch_ingress_categ"

    def token(self):
        return IngressToken(lambda t: list(factor_features(t)), "categorical")


class PipeOpTorchIngressLazy(PipeOpTorchIngress):
    default_id = "torch_ingress_ltnsr"

    def __init__(self, id=None, **values):
        super().__init__(id, ParamSet([p_uty("shape", default=None)]), **values)

    def token(self):
        shape = self.values.get("shape")
        return IngressToken(lambda t: list(lazy_features(t)), "lazy", None if shape is None else tuple(shape))


# -- configuration ----------------------------------------------------------------


class PipeOpTorchLoss(PipeOp):
    input_channels = (Channel("input", "ModelDescriptor", "Task"),)
    output_channels = (Channel("output", "ModelDescriptor", "Task"),)

    def __init__(self, loss=None, id: str = "torch_loss", **values):
        if loss is None:
            raise ValueError("torch_loss needs a loss")
        self.loss = as_loss(loss)
        super().__init__(id, self.loss.param_set, **values)

    def _train(self, inputs):
        md = inputs[0]
        if md.loss is not None:
            raise PipelineError(f"{self.id}: a loss is already attached")
        self.state = {}
        return [replace(md, loss=copy.deepcopy(self.loss))]

    def _predict(self, inputs):
        return [inputs[0]]


class PipeOpTorchOptimizer(PipeOp):
    input_channels = (Channel("input", "ModelDescriptor", "Task"),)
    output_channels = (Channel("output", "ModelDescriptor", "Task"),)

    def __init__(self, optimizer=None, id: str = "torch_optimizer", **values):
        self.optimizer = as_optimizer(optimizer or "adamw")
        super().__init__(id, self.optimizer.param_set, **values)

    def _train(self, inputs):
        md = inputs[0]
        if md.optimizer is not None:
            raise PipelineError(f"{self.id}: an optimizer is already attached")
        self.state = {}
        return [replace(md, optimizer=copy.deepcopy(self.optimizer))]

    def _predict(self, inputs):
        return [inputs[0]]


class PipeOpTorchCallbacks(PipeOp):
    input_channels = (Channel("input", "ModelDescriptor", "Task"),)
    output_channels = (Channel("output", "ModelDescriptor", "Task"),)

    def __init__(self, callbacks=(), id: str = "torch_callbacks", **values):
        if isinstance(callbacks, (str, TorchCallback)):
            callbacks = [callbacks]
        self.callbacks = as_callbacks(callbacks)
        super().__init__(id, ParamSet(), **values)

    @property
    def param_set(self):
        return ParamSetCollection({c.id: c.param_set for c in self.callbacks})

    @param_set.setter
    def param_set(self, value):
        pass

    def _train(self, inputs):
        md = inputs[0]
        if md.callbacks:
            raise PipelineError(f"{self.id}: callbacks are already attached")
        self.state = {}
        return [replace(md, callbacks=copy.deepcopy(self.callbacks))]

    def _predict(self, inputs):
        return [inputs[0]]


# -- model ------------------------------------------------------------------------


class PipeOpTorchModel(PipeOp):
    """Collapses the descriptor's network and trains it on the descriptor's Task.

    Outputs nothing in the train phase and a Prediction in the predict phase.
    """

    input_channels = (Channel("input", "ModelDescriptor", "Task"),)
    output_channels = (Channel("output", "Null", "Prediction"),)
    propagates_validation = False
    is_model_op = True

    def __init__(self, task_type: str, id: str | None = None, **values):
        if task_type not in ("classif", "regr"):
            raise ValueError(f"unknown task type {task_type!r}")
        self.task_type = task_type
        ps = training_param_set()
        choices = ["response", "prob"] if task_type == "classif" else ["response"]
        ps.params["predict_type"] = p_fct("predict_type", choices, default="response")
        ps.params["device"] = p_fct("device", ["cpu"], default="cpu")
        super().__init__(id or f"torch_model_{task_type}", ps, **values)

    @property
    def predict_type(self):
        return self.param_set.get("predict_type")

    @predict_type.setter
    def predict_type(self, value):
        self.param_set.set_values(predict_type=value)

    def _train(self, inputs):
        md = inputs[0]
        if not isinstance(md, ModelDescriptor):
            raise TypeError(f"{self.id} expects a ModelDescriptor in the train phase")
        if md.loss is None:
            raise PipelineError(f"{self.id}: no loss attached (add po('torch_loss'))")
        if md.optimizer is None:
            raise PipelineError(f"{self.id}: no optimizer attached (add po('torch_optimizer'))")
        if md.task.task_type != self.task_type:
            raise ValueError(f"{self.id} needs a {self.task_type} task, got {md.task.task_type}")
        network = collapse(md)
        values = self.param_set.get_values()
        predict_type = values.pop("predict_type")
        values.pop("device")
        learner = LearnerTorchModel(network, md.ingress, self.task_type, id=self.id, loss=md.loss,
                                    optimizer=md.optimizer, callbacks=md.callbacks)
        learner._own.set_values(values)
        learner.predict_type = predict_type
        learner.validate = "predefined" if md.task.valid_task is not None else None
        learner.train(md.task)
        self.state = {"learner": learner}
        return [None]

    def _predict(self, inputs):
        return [self.state["learner"].predict(inputs[0])]


# ---------------------------------------------------------------------------
# registry


NN_OPS = {
    "linear": PipeOpTorchLinear,
    "head": PipeOpTorchHead,
    "relu": PipeOpTorchReLU,
    "sigmoid": PipeOpTorchSigmoid,
    "dropout": PipeOpTorchDropout,
    "conv2d": PipeOpTorchConv2d,
    "max_pool2d": PipeOpTorchMaxPool2d,
    "batch_norm2d": PipeOpTorchBatchNorm2d,
    "flatten": PipeOpTorchFlatten,
    "tokenizer_num": PipeOpTorchTokenizerNum,
    "tokenizer_categ": PipeOpTorchTokenizerCateg,
    "merge_sum": PipeOpTorchMergeSum,
    "merge_cat": PipeOpTorchMergeCat,
    "block": PipeOpTorchBlock,
}

REGISTRY: dict[str, Callable[..., PipeOp]] = dict(pl.PIPEOPS)
REGISTRY.update({f"nn_{k}": v for k, v in NN_OPS.items()})
REGISTRY.update({
    "module": PipeOpModule,
    "torch_ingress_num": PipeOpTorchIngressNum,
    "torch_ingress_categ": PipeOpTorchIngressCateg,
    "torch_ingress_ltnsr": PipeOpTorchIngressLazy,
    "torch_loss": PipeOpTorchLoss,
    "torch_optimizer": PipeOpTorchOptimizer,
    "torch_callbacks": PipeOpTorchCallbacks,
    "torch_model_classif": lambda id=None, **kw: PipeOpTorchModel("classif", id, **kw),
    "torch_model_regr": lambda id=None, **kw: PipeOpTorchModel("regr", id, **kw),
})

_SUFFIX = re.compile(r"_\d+$")


def po(key: str, *args, **values) -> PipeOp:
    """Construct a registered operator; ``po("select_1")`` is ``po("select", id="select_1")``."""
    base = key if key in REGISTRY else _SUFFIX.sub("", key)
    if base not in REGISTRY:
        raise KeyError(f"unknown operator {key!r}")
    values.setdefault("id", key)
    return REGISTRY[base](*args, **values)


def nn(key: str, *args, **values) -> PipeOp:
    """Network layer operator: ``nn("linear_1", out_features=8)`` has id ``linear_1``."""
    base = key if key in NN_OPS else _SUFFIX.sub("", key)
    if base not in NN_OPS:
        raise KeyError(f"unknown layer {key!r}")
    values.setdefault("id", key)
    return NN_OPS[base](*args, **values)


def ppl(name: str, *args, **kwargs):
    """Prebuilt graph templates: ``ppl("branch", {"relu": nn("relu"), ...})``."""
    if name == "branch":
        return pl.branch(*args, **kwargs)
    raise KeyError(f"unknown template {name!r}")
