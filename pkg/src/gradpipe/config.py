"""Declarative experiment configs (YAML) and their translation into tasks, graphs and learners.

Pipeline grammar (a list of steps, applied in sequence)::

    - op: <registered kind>        # plus optional id and hyperparameters
    - op: nn_block                 # nested segment under "block"
      block: [<steps>]
    - branch: {relu: [<steps>], sigmoid: [<steps>]}
    - parallel: [[<steps>], [<steps>]]   # side-by-side paths feeding the next step

Selectors are written ``{type: [integer, factor]}``, ``{name: [image]}`` or ``all``.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import pipeline as pl
from .data import load_csv, mtcars, synth_classif, synth_multimodal, synth_regression
from .data.task import Task
from .learner import Learner, as_learner, lrn, set_validate
from .netgraph import REGISTRY, po
from .paramset import to_tune
from .tensor import default_rng
from .torchconf import t_clbk, t_loss, t_opt
from .tune import Resampling, rsmp


_SUFFIX = re.compile(r"_\d+$")


class ConfigError(ValueError):
    pass


SECTIONS = ("seed", "data", "pipeline", "learner", "resampling", "measures", "tuning", "out")


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=dict)
    pipeline: list | None = None
    learner: dict = field(default_factory=dict)
    resampling: dict = field(default_factory=lambda: {"kind": "holdout"})
    measures: list = field(default_factory=list)
    tuning: dict | None = None
    out: str | None = None
    seed: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("a config must be a mapping at the top level")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = copy.deepcopy(v)
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("the data section is missing")
        if self.pipeline is None and "kind" not in self.learner:
            raise ConfigError("give either a pipeline or learner.kind")
        if self.pipeline is not None:
            _check_steps(self.pipeline, "pipeline")
        if self.tuning is not None and "term_evals" not in self.tuning:
            raise ConfigError("tuning.term_evals is required")


def _check_steps(steps, where: str) -> None:
    if not isinstance(steps, list) or not steps:
        raise ConfigError(f"{where}: expected a non-empty list of steps")
    for i, step in enumerate(steps):
        if not isinstance(step, dict):
            raise ConfigError(f"{where}[{i}]: a step must be a mapping")
        if "parallel" in step:
            for j, path in enumerate(step["parallel"]):
                _check_steps(path, f"{where}[{i}].parallel[{j}]")
            continue
        if "branch" in step:
            for name, path in step["branch"].items():
                _check_steps(path, f"{where}[{i}].branch.{name}")
            continue
        kind = step.get("op")
        op_id = step.get("id", kind)
        if kind is None:
            raise ConfigError(f"{where}[{i}]: missing 'op'")
        if kind not in REGISTRY and _SUFFIX.sub("", kind) not in REGISTRY:
            raise ConfigError(f"op {op_id!r}: unknown kind {kind!r}")
        if "block" in step:
            _check_steps(step["block"], f"op {op_id!r} block")


def load_config(path) -> ExperimentConfig:
    """Parse a YAML config; syntax errors report line and column."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{source}: {where}: {err.problem}") from None
    return ExperimentConfig.from_dict(raw or {})


# ---------------------------------------------------------------------------
# building


def build_task(data: dict) -> Task:
    d = dict(data)
    if "synth" in d:
        kind = d.pop("synth")
        rng = default_rng()
        if kind == "regr":
            return synth_regression(int(d.get("n", 200)), int(d.get("d", 10)), rng, float(d.get("noise", 0.1)))
        if kind == "classif":
            return synth_classif(int(d.get("n", 200)), int(d.get("d", 10)), int(d.get("k", 2)), rng)
        if kind == "multimodal":
            extra = {k: d[k] for k in ("positive_ratio", "missing_rate", "n_groups") if k in d}
            return synth_multimodal(int(d.get("n", 500)), tuple(d.get("image_shape", (3, 16, 16))), rng, **extra)
        raise ConfigError(f"unknown synthetic data {kind!r}")
    if d.get("builtin") == "mtcars":
        return mtcars()
    if "csv" in d:
        if "target" not in d:
            raise ConfigError("data.target is required for csv data")
        return load_csv(d["csv"], d["target"], d.get("task_type"), d.get("schema"), d.get("id"), d.get("group"))
    raise ConfigError("data needs one of synth, builtin or csv")


def _selector(spec):
    if callable(spec):
        return spec
    if spec == "all":
        return pl.selector_all()
    if isinstance(spec, dict) and len(spec) == 1:
        (k, v), = spec.items()
        if k == "type":
            return pl.selector_type(v)
        if k == "name":
            return pl.selector_name(v)
    raise ConfigError(f"cannot read selector {spec!r}")


def _loss(spec):
    if isinstance(spec, str):
        return t_loss(spec)
    spec = dict(spec)
    return t_loss(spec.pop("kind"), **spec)


def _optimizer(spec):
    if isinstance(spec, str):
        return t_opt(spec)
    spec = dict(spec)
    return t_opt(spec.pop("kind"), **spec)


def _callbacks(specs):
    out = []
    for s in specs:
        if isinstance(s, str):
            out.append(t_clbk(s))
        else:
            s = dict(s)
            out.append(t_clbk(s.pop("id"), **s))
    return out


def _tuple_values(values: dict) -> dict:
    return {k: tuple(v) if k in ("shape", "size", "neurons", "betas", "mean", "std") and isinstance(v, list) else v
            for k, v in values.items()}


def build_step(step: dict):
    if "parallel" in step:
        return [build_graph(path) for path in step["parallel"]]
    if "branch" in step:
        paths = {name: build_graph(path) for name, path in step["branch"].items()}
        extra = {k: v for k, v in step.items() if k != "branch"}
        return pl.branch(paths, **extra)
    s = dict(step)
    kind = s.pop("op")
    op_id = s.get("id", kind)
    args = []
    if "block" in s:
        args.append(build_graph(s.pop("block")))
    if "selector" in s:
        s["selector"] = _selector(s["selector"])
    if "loss" in s:
        args.append(_loss(s.pop("loss")))
    if "optimizer" in s:
        args.append(_optimizer(s.pop("optimizer")))
    if "callbacks" in s:
        args.append(_callbacks(s.pop("callbacks")))
    try:
        return po(kind, *args, **_tuple_values(s))
    except Exception as err:
        raise ConfigError(f"op {op_id!r}: {err}") from err


def build_graph(steps: list):
    graph = None
    for step in steps:
        part = build_step(step)
        graph = pl.as_graph(part) if graph is None else graph >> part
    return graph


def build_learner(cfg: ExperimentConfig) -> Learner:
    spec = dict(cfg.learner)
    fields_ = {k: spec.pop(k) for k in ("id", "validate", "predict_type") if k in spec}
    if cfg.pipeline is not None:
        learner = as_learner(build_graph(cfg.pipeline), fields_.get("id"))
        if spec:
            learner.param_set.set_values(_tuple_values(spec))
    else:
        kind = spec.pop("kind")
        for key in ("loss", "optimizer"):
            if key in spec:
                spec[key] = _loss(spec[key]) if key == "loss" else _optimizer(spec[key])
        if "callbacks" in spec:
            spec["callbacks"] = _callbacks(spec["callbacks"])
        learner = lrn(kind, **_tuple_values(spec))
        if "id" in fields_:
            learner.id = fields_["id"]
    if "predict_type" in fields_:
        learner.configure(predict_type=fields_["predict_type"])
    if "validate" in fields_:
        set_validate(learner, fields_["validate"])
    return learner


def build_resampling(spec: dict) -> Resampling:
    s = dict(spec)
    return rsmp(s.pop("kind", "holdout"), **s)


def apply_search_space(learner: Learner, space: dict) -> None:
    """``name: {lower, upper[, logscale]} | {levels: [...]} | {internal: true, upper}``."""
    for name, t in space.items():
        t = dict(t)
        if "levels" in t:
            token = to_tune(list(t["levels"]))
        elif t.get("internal"):
            token = to_tune(upper=t.get("upper"), internal=True)
        else:
            token = to_tune(t["lower"], t["upper"], logscale=bool(t.get("logscale", False)))
        learner.param_set.set_values({name: token})


# ---------------------------------------------------------------------------
# bundled experiments for --synth


def default_config(kind: str) -> ExperimentConfig:
    if kind == "regr":
        return ExperimentConfig.from_dict(copy.deepcopy(REGR_EXPERIMENT))
    if kind == "multimodal":
        return ExperimentConfig.from_dict(copy.deepcopy(MULTIMODAL_EXPERIMENT))
    raise ConfigError(f"unknown synthetic experiment {kind!r}")


REGR_EXPERIMENT = {
    "seed": 1,
    "data": {"synth": "regr", "n": 200, "d": 10},
    "pipeline": [
        {"op": "torch_ingress_num"},
        {"op": "nn_block", "id": "block", "n_blocks": 2, "block": [
            {"op": "nn_linear", "id": "linear", "out_features": 32},
            {"branch": {"relu": [{"op": "nn_relu", "id": "relu"}],
                        "sigmoid": [{"op": "nn_sigmoid", "id": "sigmoid"}]}},
            {"op": "nn_dropout", "id": "dropout", "p": 0.2},
        ]},
        {"op": "nn_head", "id": "head"},
        {"op": "torch_loss", "loss": "mse"},
        {"op": "torch_optimizer", "optimizer": {"kind": "adamw", "lr": 0.003}},
        {"op": "torch_model_regr", "epochs": 30, "batch_size": 32, "patience": 5,
         "measures_valid": ["regr.mse"]},
    ],
    "learner": {"id": "custom_nn", "validate": "test"},
    "resampling": {"kind": "holdout"},
    "measures": ["regr.rmse", "regr.mse"],
    "tuning": {
        "term_evals": 10,
        "measure": {"id": "internal_valid_score", "minimize": True},
        "search_space": {
            "block.linear.out_features": {"lower": 20, "upper": 500},
            "block.n_blocks": {"lower": 1, "upper": 5},
            "block.branch.selection": {"levels": ["relu", "sigmoid"]},
            "block.dropout.p": {"lower": 0.1, "upper": 0.9},
            "torch_optimizer.lr": {"lower": 1e-4, "upper": 0.1, "logscale": True},
            "torch_model_regr.epochs": {"internal": True, "upper": 100},
        },
    },
}

MULTIMODAL_EXPERIMENT = {
    "seed": 1,
    "data": {"synth": "multimodal", "n": 500, "image_shape": [3, 16, 16]},
    "pipeline": [
        {"op": "classbalancing", "ratio": 4, "reference": "minor", "adjust": "minor"},
        {"op": "augment_random_horizontal_flip"},
        {"op": "augment_random_vertical_flip"},
        {"op": "augment_random_crop", "size": [16, 16], "pad_if_needed": True},
        {"parallel": [
            [
                {"op": "select", "id": "select_1", "selector": {"type": ["integer", "factor"]}},
                {"op": "imputehist"},
                {"op": "encode", "method": "one-hot"},
                {"op": "torch_ingress_num"},
                {"op": "nn_tokenizer_num", "id": "tokenizer_num", "d_token": 4},
                {"op": "nn_flatten", "id": "flatten_tab"},
                {"op": "nn_block", "id": "block_1", "n_blocks": 2, "block": [
                    {"op": "nn_linear", "id": "linear", "out_features": 32},
                    {"op": "nn_relu", "id": "relu"},
                ]},
            ],
            [
                {"op": "select", "id": "select_2", "selector": {"name": ["image"]}},
                {"op": "torch_ingress_ltnsr", "shape": [None, 3, 16, 16]},
                {"op": "nn_conv2d", "id": "conv2d_1", "out_channels": 8, "kernel_size": 7, "stride": 2, "padding": 3},
                {"op": "nn_batch_norm2d", "id": "batch_norm2d_1"},
                {"op": "nn_relu", "id": "relu_1"},
                {"op": "nn_max_pool2d", "id": "max_pool2d_1", "kernel_size": 3, "stride": 2, "padding": 1},
                {"op": "nn_conv2d", "id": "conv2d_2", "out_channels": 16, "kernel_size": 3, "padding": 1},
                {"op": "nn_batch_norm2d", "id": "batch_norm2d_2"},
                {"op": "nn_relu", "id": "relu_2"},
                {"op": "nn_flatten", "id": "flatten"},
            ],
        ]},
        {"op": "nn_merge_cat", "id": "merge_cat"},
        {"op": "nn_relu", "id": "relu_4"},
        {"op": "nn_head", "id": "head"},
        {"op": "torch_loss", "loss": {"kind": "cross_entropy", "class_weight": 10.0}},
        {"op": "torch_optimizer", "optimizer": {"kind": "adamw", "lr": 0.0005}},
        {"op": "torch_model_classif", "epochs": 4, "batch_size": 32, "predict_type": "prob"},
    ],
    "learner": {"id": "multimodal", "predict_type": "prob"},
    "resampling": {"kind": "holdout"},
    "measures": ["classif.auc", "classif.acc"],
}
