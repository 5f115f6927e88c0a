"""Training-loop callbacks and the context they see."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .optim import clip_grad_norm

HOOKS = ("on_begin", "on_epoch_begin", "on_batch_begin", "on_after_backward",
         "on_batch_end", "on_epoch_end", "on_valid_end", "on_end")


@dataclass
class TrainContext:
    learner: Any
    network: Any
    optimizer: Any
    task_train: Any
    task_valid: Any
    total_epochs: int
    epoch: int = 0
    step: int = 0
    batch: Any = None
    last_loss: float | None = None
    last_scores_train: dict = field(default_factory=dict)
    last_scores_valid: dict = field(default_factory=dict)
    stop_requested: bool = False


class Callback:
    """Override any of the hook methods named in :data:`HOOKS`."""

    id = "callback"

    def __init__(self, **params):
        self.ctx: TrainContext | None = None
        for k, v in params.items():
            setattr(self, k, v)

    def hooks(self) -> list[str]:
        return [h for h in HOOKS if getattr(type(self), h, None) is not getattr(Callback, h, None)]

    def state_dict(self):
        return None

    def load_state_dict(self, state) -> None:
        pass


for _hook in HOOKS:
    setattr(Callback, _hook, lambda self: None)


class CallbackHistory(Callback):
    """One row per epoch with the train and validation measures."""

    id = "history"

    def on_begin(self):
        self.rows: list[dict] = []

    def on_epoch_end(self):
        row = {"epoch": self.ctx.epoch}
        row.update({f"train.{k}": v for k, v in self.ctx.last_scores_train.items()})
        self.rows.append(row)

    def on_valid_end(self):
        self.rows[-1].update({f"valid.{k}": v for k, v in self.ctx.last_scores_valid.items()})

    def state_dict(self):
        return list(getattr(self, "rows", []))

    def load_state_dict(self, state):
        self.rows = list(state)


class CallbackGradientClipper(Callback):
    """Clips the global gradient norm after each backward pass and records the pre-clip norms."""

    id = "gradient_clipper"
    max_norm = 1.0
    norm_type = 2.0

    def on_begin(self):
        self.norms: list[float] = []

    def on_after_backward(self):
        params = [p for p in self.ctx.network.parameters() if p.requires_grad]
        self.norms.append(clip_grad_norm(params, self.max_norm, self.norm_type))

    def state_dict(self):
        return list(getattr(self, "norms", []))

    def load_state_dict(self, state):
        self.norms = list(state)


# -- parameter selectors ------------------------------------------------------

def select_all() -> Callable[[Sequence[str]], list]:
    return lambda names: list(names)


def select_none() -> Callable[[Sequence[str]], list]:
    return lambda names: []


def select_name(names) -> Callable[[Sequence[str]], list]:
    wanted = [names] if isinstance(names, str) else list(names)
    return lambda all_names: [n for n in all_names if n in wanted]


def select_grep(pattern: str) -> Callable[[Sequence[str]], list]:
    rx = re.compile(pattern)
    return lambda names: [n for n in names if rx.search(n)]


def select_invert(selector) -> Callable[[Sequence[str]], list]:
    return lambda names: [n for n in names if n not in set(selector(names))]


class CallbackUnfreeze(Callback):
    """Train only ``starting_weights`` at first, then unfreeze per ``unfreeze`` rows of (epoch, selector)."""

    id = "unfreeze"
    starting_weights = None
    unfreeze: Sequence = ()

    def _resolve(self, selector) -> list[str]:
        names = [n for n, _ in self.ctx.network.named_parameters()]
        chosen = selector(names)
        if not chosen:
            raise ValueError("parameter selector matched no parameters")
        return chosen

    def on_begin(self):
        start = set(self._resolve(self.starting_weights or select_all()))
        for n, p in self.ctx.network.named_parameters():
            p.requires_grad = n in start
            if not p.requires_grad:
                p.grad = None

    def on_epoch_begin(self):
        for epoch, selector in self.unfreeze:
            if epoch == self.ctx.epoch:
                params = dict(self.ctx.network.named_parameters())
                for n in self._resolve(selector):
                    params[n].requires_grad = True


def torch_callback(id: str, initialize: Callable | None = None, state_dict: Callable | None = None,
                   load_state_dict: Callable | None = None, **hooks) -> type:
    """Build a callback class from plain functions taking ``self``."""
    unknown = set(hooks) - set(HOOKS)
    if unknown:
        raise ValueError(f"unknown hooks {sorted(unknown)}")
    ns: dict[str, Any] = {"id": id}
    ns.update(hooks)

    def __init__(self, **params):
        Callback.__init__(self)
        if initialize is not None:
            initialize(self, **params)
        else:
            for k, v in params.items():
                setattr(self, k, v)

    ns["__init__"] = __init__
    if state_dict is not None:
        ns["state_dict"] = state_dict
    if load_state_dict is not None:
        ns["load_state_dict"] = load_state_dict
    return type(f"Callback_{id}", (Callback,), ns)
