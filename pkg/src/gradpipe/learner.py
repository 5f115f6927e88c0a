"""Learners: configuration, the epoch/batch training loop, prediction and marshaling."""

from __future__ import annotations

import copy
import inspect
import json
import logging
import math
import pickle
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .callbacks import TrainContext
from .data.lazy import LazyTensorColumn
from .data.loading import BatchSource, factor_features, lazy_features, numeric_features
from .data.task import Task
from .measures import INTERNAL_VALID_SCORE, Measure, Prediction, as_measures
from .functional import softmax
from .nn import Module, ReLU, Sigmoid, loss_forward, mlp
from .paramset import ParamSet, ParamSetCollection, TuneToken, p_dbl, p_fct, p_int, p_lgl, p_uty
from .serialization import pack_state, unpack_state
from .tensor import RngState, Tensor, default_rng, derive_seed, fork_rng, no_grad
from .torchconf import TorchCallback, as_callbacks, as_loss, as_optimizer, t_loss, t_opt

log = logging.getLogger(__name__)

MAGIC = b"GPMODEL\x00"
FORMAT_VERSION = 1


class MarshaledModelError(RuntimeError):
    pass


def training_param_set() -> ParamSet:
    """Hyperparameters shared by every neural learner."""
    return ParamSet([
        p_int("epochs", 0, None, tags=("required", "internal_tuning")),
        p_int("batch_size", 1, None, tags=("required",)),
        p_int("patience", 0, None, default=0),
        p_dbl("min_delta", 0, None, default=0.0),
        p_uty("measures_train", default=()),
        p_uty("measures_valid", default=()),
        p_lgl("shuffle", default=True),
        p_int("seed", None, None, default=None),
        p_uty("predict_batch_size", default=None),
    ])


@dataclass
class IngressSpec:
    """How the columns ``features`` of a task become one input tensor."""

    name: str
    assembly: str
    features: tuple
    shape: tuple | None

    def __post_init__(self):
        self.features = tuple(self.features)
        if self.shape is not None:
            self.shape = tuple(self.shape)


@dataclass
class TrainedModel:
    network: Module | None
    ingress: dict
    task_type: str
    class_names: tuple
    feature_names: tuple
    optimizer_state: bytes = b""
    callback_states: dict = field(default_factory=dict)
    internal_valid_scores: dict = field(default_factory=dict)
    internal_tuned_values: dict = field(default_factory=dict)
    marshaled: bool = False
    payload: bytes | None = None


# ---------------------------------------------------------------------------
# marshaling

def _strip(module: Module) -> Module:
    skeleton = copy.deepcopy(module)
    for _, t in list(skeleton.named_parameters()) + list(skeleton.named_buffers()):
        # canonical dtype instances keep the pickle bytes stable across round trips
        t.data = np.zeros((0,), dtype=np.dtype(t.data.dtype.str))
        t.grad = None
        t.node = None
    return skeleton


def marshal_model(model: TrainedModel, learner_id: str = "", params_text: str = "{}") -> bytes:
    """Portable bytes: magic, version, JSON header, pickled skeleton and golden-format state."""
    if model.marshaled:
        return model.payload
    header = {
        "learner_id": learner_id,
        "params": params_text,
        "task_type": model.task_type,
        "class_names": list(model.class_names),
        "feature_names": list(model.feature_names),
        "ingress": [[s.name, s.assembly, list(s.features), None if s.shape is None else list(s.shape)]
                    for s in model.ingress.values()],
        "callback_states": model.callback_states,
        "internal_valid_scores": model.internal_valid_scores,
        "internal_tuned_values": model.internal_tuned_values,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), default=float).encode("utf-8")
    skeleton = pickle.dumps(_strip(model.network), protocol=4)
    state = model.network.state_dict_bytes()
    parts = [head, skeleton, state, model.optimizer_state]
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(parts))]
    for part in parts:
        out.append(struct.pack("<Q", len(part)))
        out.append(part)
    return b"".join(out)


def unmarshal_model(buf: bytes) -> tuple[TrainedModel, dict]:
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise ValueError("not a marshaled model (bad magic)")
    version, n = struct.unpack_from("<II", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    pos = len(MAGIC) + 8
    parts = []
    for _ in range(n):
        if pos + 8 > len(buf):
            raise ValueError("truncated model payload")
        (size,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + size > len(buf):
            raise ValueError("truncated model payload")
        parts.append(buf[pos:pos + size])
        pos += size
    if pos != len(buf) or n != 4:
        raise ValueError("corrupt model payload")
    try:
        header = json.loads(parts[0].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"corrupt model header: {err}") from None
    network = pickle.loads(parts[1])
    tensors, _ = unpack_state(parts[2])
    slots = network.state_dict()
    if set(slots) != set(tensors):
        raise ValueError("model payload does not match the network skeleton")
    for name, t in slots.items():
        t.data = np.array(tensors[name].data, copy=True)
    ingress = {name: IngressSpec(name, asm, tuple(feats), None if shape is None else tuple(shape))
               for name, asm, feats, shape in header["ingress"]}
    model = TrainedModel(network, ingress, header["task_type"], tuple(header["class_names"]),
                         tuple(header["feature_names"]), parts[3], header["callback_states"],
                         header["internal_valid_scores"], header["internal_tuned_values"])
    return model, header


def _canonical(values: dict) -> str:
    def enc(v):
        if isinstance(v, (str, int, float, bool)) or v is None:
            return v
        if isinstance(v, (list, tuple)):
            return [enc(x) for x in v]
        if isinstance(v, Measure):
            return v.id
        if isinstance(v, TuneToken):
            return repr(v)
        return repr(v) if not callable(v) else getattr(v, "description", getattr(v, "__name__", "<fn>"))
    return json.dumps({k: enc(v) for k, v in sorted(values.items())}, sort_keys=True)


# ---------------------------------------------------------------------------
# the learner base class


class Learner:
    """Common fields: ``predict_type``, ``validate`` and ``fallback``."""

    def __init__(self, id: str, task_type: str):
        if task_type not in ("classif", "regr"):
            raise ValueError(f"unknown task type {task_type!r}")
        self.id = id
        self.task_type = task_type
        self.predict_type = "response"
        self.validate = None
        self.fallback: Learner | None = None
        self.fallback_used = False
        self.errors: list[str] = []

    @property
    def predict_types(self) -> tuple:
        return ("response", "prob") if self.task_type == "classif" else ("response",)

    def configure(self, **kwargs) -> "Learner":
        fields = {"predict_type", "validate", "fallback", "id"}
        params = {}
        for k, v in kwargs.items():
            if k in fields:
                setattr(self, k, v)
            else:
                params[k] = v
        if params:
            self.param_set.set_values(params)
        if self.predict_type not in self.predict_types:
            raise ValueError(f"{self.id} cannot predict {self.predict_type!r}")
        return self

    def clone(self) -> "Learner":
        return copy.deepcopy(self)

    def _split_validation(self, task: Task, row_ids, valid_row_ids) -> tuple[Task, Task | None]:
        train = task if row_ids is None else task.filter(row_ids)
        v = self.validate
        if valid_row_ids is not None:
            if v is None:
                return train, None
            return train, task.filter(valid_row_ids)
        if v is None:
            return train, None
        if v == "predefined":
            if task.valid_task is None:
                raise ValueError("validate='predefined' but the task has no validation task")
            return train, task.valid_task
        if v == "test":
            raise ValueError("validate='test' needs validation rows from a resampling")
        ratio = float(v)
        if not 0 < ratio < 1:
            raise ValueError("validate ratio must lie in (0, 1)")
        ids = train.row_ids
        n_valid = int(round(ratio * len(ids)))
        perm = default_rng().generator().permutation(len(ids))
        valid_ids = np.sort(ids[perm[:n_valid]])
        train_ids = np.sort(ids[perm[n_valid:]])
        return train.filter(train_ids), train.filter(valid_ids)

    def train(self, task: Task, row_ids=None, valid_row_ids=None) -> "Learner":
        if task.task_type != self.task_type:
            raise ValueError(f"{self.id} is a {self.task_type} learner, task is {task.task_type}")
        self.fallback_used = False
        try:
            train, valid = self._split_validation(task, row_ids, valid_row_ids)
            self._train(train, valid)
        except Exception as err:
            if self.fallback is None:
                raise
            self.errors.append(f"{type(err).__name__}: {err}")
            self.fallback_used = True
            self.fallback = self.fallback.clone()
            self.fallback.train(task, row_ids)
        return self

    def predict(self, task: Task, row_ids=None) -> Prediction:
        if self.fallback_used:
            return self.fallback.predict(task, row_ids)
        sub = task if row_ids is None else task.filter(row_ids)
        return self._predict(sub)

    def _train(self, task: Task, valid: Task | None) -> None:
        raise NotImplementedError

    def _predict(self, task: Task) -> Prediction:
        raise NotImplementedError

    @property
    def internal_tuned_values(self) -> dict:
        return {}

    @property
    def internal_valid_scores(self) -> dict:
        return {}


class LearnerFeatureless(Learner):
    """Constant predictions: majority class (with empirical class frequencies) or target mean."""

    def __init__(self, task_type: str, id: str | None = None, **fields):
        super().__init__(id or f"{task_type}.featureless", task_type)
        self.param_set = ParamSet()
        self.model = None
        self.configure(**fields)

    def _train(self, task, valid):
        y = task.truth()
        if self.task_type == "classif":
            k = len(task.class_names)
            counts = np.bincount(y[y >= 0], minlength=k).astype(np.float64)
            self.model = {"prob": counts / max(counts.sum(), 1.0), "class_names": task.class_names}
        else:
            self.model = {"mean": float(np.nanmean(y)) if len(y) else 0.0}

    def _predict(self, task):
        if self.model is None:
            raise RuntimeError("learner has no model; call train first")
        n = task.nrow
        truth = task.truth() if task.target in task.columns else None
        if self.task_type == "classif":
            prob = np.tile(self.model["prob"], (n, 1))
            resp = np.full(n, int(np.argmax(self.model["prob"])))
            return Prediction("classif", task.row_ids, truth, resp,
                              prob if self.predict_type == "prob" else None, self.model["class_names"])
        return Prediction("regr", task.row_ids, truth, np.full(n, self.model["mean"]))


class LearnerTorch(Learner):
    """Base class for neural learners.

    Subclasses implement :meth:`build` returning ``(network, ingress)``.  The
    merged ParamSet routes ``loss.*``, ``opt.*`` and ``cb.<id>.*`` to the
    loss, optimizer and callback descriptors.
    """

    feature_types = ("numeric", "integer", "factor", "lazy_tensor")

    def __init__(self, id: str, task_type: str, loss=None, optimizer=None, callbacks=(),
                 extra_params=(), **values):
        super().__init__(id, task_type)
        self.loss = as_loss(loss or ("cross_entropy" if task_type == "classif" else "mse"))
        if task_type not in self.loss.task_types:
            raise ValueError(f"loss {self.loss.kind} does not fit a {task_type} task")
        self.optimizer = as_optimizer(optimizer or "adamw")
        self.callbacks: list[TorchCallback] = as_callbacks(callbacks)
        own = training_param_set()
        for p in extra_params:
            own.params[p.id] = p
        self._own = own
        self.model: TrainedModel | None = None
        self.properties = ("marshal", "validation", "internal_tuning")
        if values:
            self.configure(**values)

    @property
    def param_set(self) -> ParamSetCollection:
        sets = {"": self._own, "loss": self.loss.param_set, "opt": self.optimizer.param_set}
        for cb in self.callbacks:
            sets[f"cb.{cb.id}"] = cb.param_set
        return ParamSetCollection(sets)

    def build(self, task: Task) -> tuple[Module, dict]:
        raise NotImplementedError

    def _call(self, network, x: dict):
        if len(x) == 1 and not getattr(network, "takes_named_inputs", False):
            return network(next(iter(x.values())))
        return network(x) if getattr(network, "takes_named_inputs", False) else network(**x)

    def _check_task(self, task: Task):
        bad = {k for k in task.feature_types.values() if k not in self.feature_types}
        if bad:
            raise TypeError(f"{self.id} does not support feature types {sorted(bad)}")

    def _train(self, task: Task, valid: Task | None) -> None:
        self._check_task(task)
        params = self._own.get_values()
        missing = [k for k in ("epochs", "batch_size") if params.get(k) is None]
        if missing:
            raise ValueError(f"required hyperparameters not set: {missing}")
        seed = params.get("seed")
        if seed is None:
            self.model = self._fit(task, valid, params)
        else:
            with fork_rng(seed):
                self.model = self._fit(task, valid, params)

    def _fit(self, task, valid, params) -> TrainedModel:
        network, ingress = self.build(task)
        return train_network(self, network, ingress, task, valid, params)

    def _predict(self, task: Task) -> Prediction:
        if self.model is None:
            raise RuntimeError(f"{self.id} has no model; call train first")
        if self.model.marshaled:
            raise MarshaledModelError("model is marshaled; call unmarshal first")
        bs = self._own.get("predict_batch_size") or self._own.get("batch_size") or 256
        return predict_network(self, self.model.network, self.model.ingress, task, bs, self.predict_type,
                               self.model.class_names)

    @property
    def internal_tuned_values(self) -> dict:
        return dict(self.model.internal_tuned_values) if self.model else {}

    @property
    def internal_valid_scores(self) -> dict:
        return dict(self.model.internal_valid_scores) if self.model else {}

    @property
    def history(self) -> list[dict]:
        if self.model is None:
            return []
        return list(self.model.callback_states.get("history", []))

    def marshal(self) -> "LearnerTorch":
        if self.model is not None and not self.model.marshaled:
            payload = marshal_model(self.model, self.id, _canonical(self.param_set.get_values()))
            m = self.model
            self.model = TrainedModel(None, m.ingress, m.task_type, m.class_names, m.feature_names,
                                      m.optimizer_state, m.callback_states, m.internal_valid_scores,
                                      m.internal_tuned_values, True, payload)
        return self

    def unmarshal(self) -> "LearnerTorch":
        if self.model is not None and self.model.marshaled:
            self.model, header = unmarshal_model(self.model.payload)
            if header["learner_id"] != self.id:
                raise ValueError(f"payload belongs to {header['learner_id']!r}, not {self.id!r}")
        return self

    @property
    def marshaled(self) -> bool:
        return bool(self.model and self.model.marshaled)


# ---------------------------------------------------------------------------
# training and prediction loops


def _as_input(arr: np.ndarray) -> Tensor:
    return Tensor(arr)


def _batch_prediction(task_type, out: np.ndarray, y, index, class_names, want_prob=True) -> Prediction:
    if task_type == "classif":
        prob = softmax(out.astype(np.float64), axis=1)
        return Prediction("classif", index, y, out.argmax(axis=1), prob if want_prob else None, class_names)
    return Prediction("regr", index, None if y is None else y.reshape(-1), out.reshape(-1))


def train_network(learner: LearnerTorch, network: Module, ingress: Mapping[str, IngressSpec],
                  task: Task, valid: Task | None, params: dict) -> TrainedModel:
    epochs = int(params["epochs"])
    batch_size = int(params["batch_size"])
    patience = int(params.get("patience") or 0)
    min_delta = float(params.get("min_delta") or 0.0)
    measures_train = as_measures(params.get("measures_train"))
    measures_valid = as_measures(params.get("measures_valid"))
    shuffle = params.get("shuffle", True)
    class_names = task.class_names
    loss_spec = learner.loss.spec(len(class_names) if class_names else None)

    network.train()
    optimizer = learner.optimizer.make(list(network.named_parameters()))
    callbacks = [c.make() for c in learner.callbacks]
    ctx = TrainContext(learner, network, optimizer, task, valid, epochs)
    hooks = {}
    for cb in callbacks:
        cb.ctx = ctx
        for h in cb.hooks():
            hooks.setdefault(h, []).append(getattr(cb, h))

    def fire(name):
        for fn in hooks.get(name, ()):
            fn()

    source = BatchSource(task, ingress)
    valid_source = BatchSource(valid, ingress) if valid is not None and valid.nrow else None
    rng = default_rng()
    track = measures_valid[0] if measures_valid else None
    best, best_epoch, since = None, 0, 0
    params_list = network.parameters()

    fire("on_begin")
    for epoch in range(1, epochs + 1):
        ctx.epoch = epoch
        fire("on_epoch_begin")
        sums = dict.fromkeys((m.id for m in measures_train), 0.0)
        seen = 0
        for batch in source.iter(batch_size, shuffle, rng, "train"):
            ctx.batch = batch
            fire("on_batch_begin")
            for p in params_list:
                p.grad = None
            out = learner._call(network, {k: _as_input(v) for k, v in batch.x.items()})
            loss = loss_forward(loss_spec, out, batch.y)
            loss.backward()
            ctx.last_loss = float(loss.data)
            fire("on_after_backward")
            optimizer.step()
            ctx.step += 1
            if measures_train:
                pred = _batch_prediction(task.task_type, out.data, batch.y, batch.index, class_names)
                for m in measures_train:
                    sums[m.id] += m.score(pred) * len(batch)
                seen += len(batch)
            fire("on_batch_end")
        ctx.last_scores_train = {k: v / seen for k, v in sums.items()} if seen else {}
        fire("on_epoch_end")
        if valid_source is not None and measures_valid:
            pred = predict_network(learner, network, ingress, valid, max(batch_size, 256), "prob",
                                   class_names, source=valid_source)
            network.train()
            ctx.last_scores_valid = {m.id: m.score(pred) for m in measures_valid}
            fire("on_valid_end")
            if patience > 0:
                score = ctx.last_scores_valid[track.id]
                if best is None or track.better(score, best, min_delta):
                    best, best_epoch, since = score, epoch, 0
                else:
                    since += 1
                    if since >= patience:
                        ctx.stop_requested = True
        if log.isEnabledFor(logging.INFO):
            fields = [f"epoch={epoch}"]
            fields += [f"train.{k}={v:.6g}" for k, v in ctx.last_scores_train.items()]
            fields += [f"valid.{k}={v:.6g}" for k, v in ctx.last_scores_valid.items()]
            log.info("%s %s", learner.id, " ".join(fields))
        if ctx.stop_requested:
            break
    fire("on_end")
    network.eval()
    for p in params_list:
        p.grad = None
    tuned = {"epochs": best_epoch} if patience > 0 and track is not None and valid_source is not None else {}
    return TrainedModel(
        network, dict(ingress), task.task_type, class_names, task.feature_names,
        optimizer.state_dict_bytes(),
        {cb.id: cb.state_dict() for cb in callbacks if cb.state_dict() is not None},
        dict(ctx.last_scores_valid), tuned)


def predict_network(learner, network: Module, ingress, task: Task, batch_size: int, predict_type: str,
                    class_names, source: BatchSource | None = None) -> Prediction:
    network.eval()
    source = source or BatchSource(task, ingress)
    outs = []
    n = task.nrow
    with no_grad():
        for start in range(0, n, batch_size):
            pos = np.arange(start, min(start + batch_size, n))
            x = source.x(pos, "predict")
            outs.append(learner._call(network, {k: _as_input(v) for k, v in x.items()}).data)
    out = np.concatenate(outs) if outs else np.zeros((0, max(len(class_names), 1)))
    truth = task.truth() if task.target in task.columns else None
    if task.task_type == "classif":
        prob = softmax(out.astype(np.float64), axis=1)
        resp = prob.argmax(axis=1)
        return Prediction("classif", task.row_ids, truth, resp, prob if predict_type == "prob" else None,
                          class_names)
    return Prediction("regr", task.row_ids, truth, out.reshape(-1).astype(np.float64))


# ---------------------------------------------------------------------------
# concrete learners


def _single_lazy(task: Task) -> str | None:
    lazy = lazy_features(task)
    if lazy and len(lazy) == 1 and len(task.feature_names) == 1:
        return lazy[0]
    return None


def default_ingress(task: Task) -> dict:
    """One numeric input, or the single lazy tensor column when that is the only feature."""
    lazy = _single_lazy(task)
    if lazy is not None:
        shape = task.columns[lazy].declared_shape
        return {"x": IngressSpec("x", "lazy", (lazy,), None if shape is None else (None, *shape))}
    feats = numeric_features(task)
    if len(feats) != len(task.feature_names):
        raise TypeError("only numeric or integer features are supported here; encode factors first")
    return {"x": IngressSpec("x", "numeric", feats, (None, len(feats)))}


def _output_dim(task: Task) -> int:
    return len(task.class_names) if task.task_type == "classif" else 1


ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid}


class LearnerTorchMLP(LearnerTorch):
    """Multi-layer perceptron: (linear, activation, dropout) per entry of ``neurons``, then a linear head."""

    def __init__(self, task_type: str, id: str | None = None, **kwargs):
        extra = [p_uty("neurons", default=()), p_dbl("p", 0, 1, default=0.5),
                 p_fct("activation", list(ACTIVATIONS), default="relu")]
        values = {k: kwargs.pop(k) for k in list(kwargs) if k not in ("loss", "optimizer", "callbacks")}
        super().__init__(id or f"{task_type}.mlp", task_type, extra_params=extra, **kwargs)
        if values:
            self.configure(**values)

    def build(self, task):
        ingress = default_ingress(task)
        spec = next(iter(ingress.values()))
        if spec.shape is None or any(s is None for s in spec.shape[1:]):
            raise ValueError("the MLP needs a known input width")
        d_in = int(np.prod(spec.shape[1:]))
        v = self._own.get_values()
        net = mlp(d_in, tuple(v["neurons"]), _output_dim(task), ACTIVATIONS[v["activation"]], v["p"])
        return net, ingress

    def network_for(self, d_in: int, d_out: int):
        v = self._own.get_values()
        return mlp(d_in, tuple(v["neurons"]), d_out, ACTIVATIONS[v["activation"]], v["p"])


@dataclass
class IngressToken:
    """Declares which features feed a named network input and how they are assembled."""

    selector: Callable[[Task], list]
    assembly: str
    shape: tuple | None = None


def ingress_num() -> IngressToken:
    return IngressToken(lambda t: list(numeric_features(t)), "numeric")


def ingress_categ() -> IngressToken:
    return IngressToken(lambda t: list(factor_features(t)), "categorical")


def ingress_ltnsr(feature: str | None = None, shape=None) -> IngressToken:
    def select(t):
        return [feature] if feature else list(lazy_features(t))
    return IngressToken(select, "lazy", None if shape is None else tuple(shape))


def resolve_ingress(name: str, token: IngressToken, task: Task) -> IngressSpec:
    feats = tuple(token.selector(task))
    if not feats:
        raise ValueError(f"ingress {name!r} matches no features")
    if token.assembly == "lazy":
        if len(feats) != 1:
            raise ValueError(f"lazy ingress {name!r} needs exactly one column, got {feats}")
        declared = task.columns[feats[0]].declared_shape
        shape = token.shape or (None if declared is None else (None, *declared))
        if shape is None or any(s is None for s in shape[1:]):
            raise ValueError(f"ingress {name!r}: element shape unknown; declare it")
    else:
        shape = (None, len(feats))
    return IngressSpec(name, token.assembly, feats, shape)


class LearnerTorchModule(LearnerTorch):
    """Learner around a module generator ``(task, **params) -> Module``.

    The module's ``forward`` arguments must be named like the ingress tokens.
    """

    def __init__(self, module_generator: Callable[..., Module], ingress_tokens: Mapping[str, IngressToken],
                 task_type: str, id: str = "module", param_set: ParamSet | None = None,
                 loss=None, optimizer=None, callbacks=(), **values):
        extra = list(param_set.params.values()) if param_set is not None else []
        self.module_generator = module_generator
        self.ingress_tokens = dict(ingress_tokens)
        self._module_params = [p.id for p in extra]
        super().__init__(id, task_type, loss, optimizer, callbacks, extra_params=extra, **values)

    def build(self, task):
        v = self._own.get_values()
        net = self.module_generator(task, **{k: v[k] for k in self._module_params if k in v})
        sig = inspect.signature(net.forward)
        names = [n for n, p in sig.parameters.items()
                 if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)]
        if sorted(names) != sorted(self.ingress_tokens):
            raise ValueError(f"ingress names {sorted(self.ingress_tokens)} do not match forward arguments {names}")
        ingress = {n: resolve_ingress(n, tok, task) for n, tok in self.ingress_tokens.items()}
        return net, ingress

    def _call(self, network, x):
        return network(**x)


class LearnerTorchModel(LearnerTorch):
    """Learner around an already built network (used by the graph model operator)."""

    def __init__(self, network: Module, ingress: Mapping[str, IngressSpec], task_type: str,
                 id: str = "model", loss=None, optimizer=None, callbacks=(), **values):
        self.network = network
        self.ingress = dict(ingress)
        super().__init__(id, task_type, loss, optimizer, callbacks, **values)

    def build(self, task):
        return copy.deepcopy(self.network), self.ingress

    def _fit(self, task, valid, params):
        # the network was built during graph elaboration; train it in place
        return train_network(self, self.network, self.ingress, task, valid, params)

    def _call(self, network, x):
        if getattr(network, "takes_named_inputs", False):
            return network(x)
        return super()._call(network, x)


def lrn(kind: str, **kwargs) -> Learner:
    """``lrn("classif.mlp")``, ``lrn("regr.featureless")`` and friends."""
    task_type, _, name = kind.partition(".")
    if name == "mlp":
        return LearnerTorchMLP(task_type, **kwargs)
    if name == "featureless":
        return LearnerFeatureless(task_type, **kwargs)
    raise ValueError(f"unknown learner {kind!r}")


# ---------------------------------------------------------------------------
# graphs as learners


class GraphLearner(Learner):
    """A pipeline graph whose final operator returns predictions."""

    def __init__(self, graph, id: str | None = None, task_type: str | None = None):
        from .pipeline import as_graph

        self.graph = as_graph(graph, clone=True)
        model_ops = [op for op in self.graph.pipeops.values() if getattr(op, "is_model_op", False)]
        if task_type is None:
            if not model_ops:
                raise ValueError("cannot infer the task type of a graph without a model operator")
            task_type = model_ops[0].task_type
        chosen = model_ops[0].predict_type if model_ops else "response"
        super().__init__(id or "graph_learner", task_type)
        self.predict_type = chosen
        self.properties = ("marshal", "validation", "internal_tuning")

    @property
    def predict_type(self):
        ops = self.model_ops if hasattr(self, "graph") else []
        return ops[0].predict_type if ops else self.__dict__.get("_predict_type", "response")

    @predict_type.setter
    def predict_type(self, value):
        for op in (self.model_ops if hasattr(self, "graph") else []):
            op.predict_type = value
        self.__dict__["_predict_type"] = value

    @property
    def param_set(self):
        return self.graph.param_set

    @property
    def model_ops(self):
        return [op for op in self.graph.pipeops.values() if getattr(op, "is_model_op", False)]

    def _train(self, task, valid):
        if valid is not None:
            task = task.with_valid(valid)
        self.graph.train(task)

    def _predict(self, task):
        out = self.graph.predict(task)
        preds = [o for o in out if isinstance(o, Prediction)]
        if len(preds) != 1:
            raise ValueError(f"graph produced {len(preds)} predictions")
        return preds[0]

    def _learners(self) -> dict:
        return {op.id: op.state["learner"] for op in self.model_ops
                if isinstance(op.state, dict) and "learner" in op.state}

    @property
    def internal_tuned_values(self) -> dict:
        return {f"{i}.{k}": v for i, l in self._learners().items() for k, v in l.internal_tuned_values.items()}

    @property
    def internal_valid_scores(self) -> dict:
        return {k: v for l in self._learners().values() for k, v in l.internal_valid_scores.items()}

    @property
    def model(self):
        learners = self._learners()
        return learners or None

    def marshal(self):
        for l in self._learners().values():
            l.marshal()
        return self

    def unmarshal(self):
        for l in self._learners().values():
            l.unmarshal()
        return self


def as_learner(graph, id: str | None = None) -> GraphLearner:
    return GraphLearner(graph, id)


def set_validate(learner: Learner, validate) -> Learner:
    if validate is not None and validate not in ("test", "predefined"):
        ratio = float(validate)
        if not 0 < ratio < 1:
            raise ValueError("validate ratio must lie in (0, 1)")
    learner.validate = validate
    return learner
