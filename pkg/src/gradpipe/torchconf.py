"""Loss, optimizer and callback descriptors with their own hyperparameters.

They are configuration objects: ``t_loss("mse")``, ``t_opt("adamw", lr=1e-3)``
and ``t_clbk("history")`` hold a ParamSet and build the runtime object on
demand.
"""

from __future__ import annotations

import copy

import numpy as np

from .callbacks import Callback, CallbackGradientClipper, CallbackHistory, CallbackUnfreeze
from .nn import LossSpec
from .optim import AdamW, SGD
from .paramset import ParamSet, p_dbl, p_uty


class TorchLoss:
    def __init__(self, kind: str, **values):
        if kind not in ("cross_entropy", "mse", "winsorized_mse"):
            raise ValueError(f"unknown loss {kind!r}")
        self.kind = kind
        params = []
        if kind == "cross_entropy":
            params.append(p_uty("class_weight", default=None))
        if kind == "winsorized_mse":
            params.append(p_dbl("max_loss", 0, None))
        self.param_set = ParamSet(params, **values)
        self.task_types = ("classif",) if kind == "cross_entropy" else ("regr",)

    def spec(self, n_classes: int | None = None) -> LossSpec:
        v = self.param_set.get_values()
        weight = v.get("class_weight")
        if weight is not None:
            w = np.asarray(getattr(weight, "data", weight), dtype=np.float64).reshape(-1)
            if w.size == 1 and n_classes == 2:
                # a single weight applies to the positive (first) class
                w = np.array([w[0], 1.0])
            weight = tuple(float(x) for x in w)
        return LossSpec(self.kind, weight, v.get("max_loss"))

    def __repr__(self):
        return f"<TorchLoss:{self.kind}>"


class TorchOptimizer:
    def __init__(self, kind: str, **values):
        if kind == "sgd":
            params = [p_dbl("lr", 0, None, default=0.01), p_dbl("weight_decay", 0, None, default=0.0)]
        elif kind == "adamw":
            params = [p_dbl("lr", 0, None, default=1e-3), p_uty("betas", default=(0.9, 0.999)),
                      p_dbl("eps", 0, None, default=1e-8), p_dbl("weight_decay", 0, None, default=0.01)]
        else:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.param_set = ParamSet(params, **values)

    def make(self, named_params):
        v = self.param_set.get_values()
        cls = SGD if self.kind == "sgd" else AdamW
        return cls(named_params, **v)

    def __repr__(self):
        return f"<TorchOptimizer:{self.kind}>"


class TorchCallback:
    def __init__(self, id: str, cls: type, param_set: ParamSet | None = None):
        self.id = id
        self.cls = cls
        self.param_set = param_set if param_set is not None else ParamSet()

    def make(self) -> Callback:
        cb = self.cls(**self.param_set.get_values())
        cb.id = self.id
        return cb

    def __repr__(self):
        return f"<TorchCallback:{self.id}>"


def _callback_params(id: str) -> tuple[type, ParamSet]:
    if id == "history":
        return CallbackHistory, ParamSet()
    if id == "gradient_clipper":
        return CallbackGradientClipper, ParamSet([p_dbl("max_norm", 0, None, default=1.0),
                                                  p_dbl("norm_type", 1, None, default=2.0)])
    if id == "unfreeze":
        return CallbackUnfreeze, ParamSet([p_uty("starting_weights", default=None),
                                           p_uty("unfreeze", default=())])
    raise ValueError(f"unknown callback {id!r}")


def t_loss(kind: str, **values) -> TorchLoss:
    return TorchLoss(kind, **values)


def t_opt(kind: str, **values) -> TorchOptimizer:
    return TorchOptimizer(kind, **values)


def t_clbk(id, **values) -> TorchCallback:
    """A built-in callback by id, or a custom :class:`Callback` subclass."""
    if isinstance(id, type):
        return TorchCallback(id.id, id, ParamSet([p_uty(k) for k in values], **values))
    cls, ps = _callback_params(id)
    ps.set_values(values)
    return TorchCallback(id, cls, ps)


def as_loss(x) -> TorchLoss:
    return x if isinstance(x, TorchLoss) else t_loss(x)


def as_optimizer(x) -> TorchOptimizer:
    return x if isinstance(x, TorchOptimizer) else t_opt(x)


def as_callbacks(xs) -> list[TorchCallback]:
    out = []
    for x in xs or ():
        out.append(x if isinstance(x, TorchCallback) else t_clbk(x))
    ids = [c.id for c in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate callback ids {ids}")
    return [copy.deepcopy(c) for c in out]
