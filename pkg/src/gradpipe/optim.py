"""SGD and AdamW update rules plus global gradient-norm clipping."""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numba
import numpy as np

from .serialization import pack_state, unpack_state
from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


@numba.njit(fastmath=True, error_model="numpy", cache=True)
def _adamw_kernel(p, g, m, v, decay, b1, b2, step, eps, tiny):  # pragma: no cover - compiled
    c1 = 1 - b1
    c2 = 1 - b2
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + c1 * gi
        vi = b2 * v[i] + c2 * gi * gi
        # moments of units with zero gradient decay into subnormals, which are very slow on x86
        if abs(mi) < tiny:
            mi = 0
        if vi < tiny:
            vi = 0
        m[i] = mi
        v[i] = vi
        p[i] = p[i] * decay - step * mi / (np.sqrt(vi) + eps)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    out = []
    for i, p in enumerate(params):
        out.append(p if isinstance(p, tuple) else (str(i), p))
    return out


class Optimizer:
    kind = ""

    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.named_params = _named(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.step_count = 0

    @property
    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _active(self):
        for name, p in self.named_params:
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise MissingGradientError(f"parameter {name!r} has no gradient")
            yield name, p

    def step(self) -> None:
        raise NotImplementedError

    def _scalars(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "weight_decay": self.weight_decay,
                "step_count": self.step_count}

    def _slots(self) -> dict:
        return {}

    def state_dict_bytes(self) -> bytes:
        return pack_state(self._slots(), self._scalars())

    def load_state_dict_bytes(self, buf: bytes) -> None:
        tensors, scalars = unpack_state(buf)
        if scalars.get("kind") != self.kind:
            raise ValueError(f"state for {scalars.get('kind')!r} cannot load into {self.kind!r}")
        self._load(tensors, scalars)

    def _load(self, tensors, scalars):
        self.lr = scalars["lr"]
        self.weight_decay = scalars["weight_decay"]
        self.step_count = scalars["step_count"]


class SGD(Optimizer):
    """theta <- theta - lr * (g + weight_decay * theta)."""

    kind = "sgd"

    def step(self) -> None:
        for _, p in self._active():
            g = p.grad.data
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)
        self.step_count += 1


class AdamW(Optimizer):
    """Adam with decoupled weight decay.

    Decay is applied first (theta *= 1 - lr * wd), then the bias-corrected
    adaptive step theta -= lr * m_hat / (sqrt(v_hat) + eps).
    """

    kind = "adamw"

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        super().__init__(params, lr, weight_decay)
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.betas = (float(b1), float(b2))
        self.eps = float(eps)
        self.exp_avg = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.exp_avg_sq = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        bc1 = 1 - b1**t
        bc2 = 1 - b2**t
        # lr * m_hat / (sqrt(v_hat) + eps) == step * m / (sqrt(v) + eps * sqrt(bc2))
        step = self.lr * math.sqrt(bc2) / bc1
        eps = self.eps * math.sqrt(bc2)
        decay = 1 - self.lr * self.weight_decay
        for name, p in self._active():
            dt = p.data.dtype.type
            g = np.ascontiguousarray(p.grad.data, dtype=p.data.dtype)
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            _adamw_kernel(p.data.reshape(-1), g.reshape(-1), self.exp_avg[name].reshape(-1),
                          self.exp_avg_sq[name].reshape(-1), dt(decay), dt(b1), dt(b2), dt(step), dt(eps),
                          dt(np.finfo(dt).tiny))

    def _scalars(self):
        out = super()._scalars()
        out.update(betas=list(self.betas), eps=self.eps)
        return out

    def _slots(self):
        slots = {}
        for name, _ in self.named_params:
            slots[f"exp_avg.{name}"] = Tensor(self.exp_avg[name], dtype=self.exp_avg[name].dtype)
            slots[f"exp_avg_sq.{name}"] = Tensor(self.exp_avg_sq[name], dtype=self.exp_avg_sq[name].dtype)
        return slots

    def _load(self, tensors, scalars):
        super()._load(tensors, scalars)
        self.betas = tuple(scalars["betas"])
        self.eps = scalars["eps"]
        for name, _ in self.named_params:
            self.exp_avg[name] = tensors[f"exp_avg.{name}"].data.copy()
            self.exp_avg_sq[name] = tensors[f"exp_avg_sq.{name}"].data.copy()


def make_optimizer(kind: str, params, **config) -> Optimizer:
    if kind == "sgd":
        return SGD(params, **config)
    if kind == "adamw":
        return AdamW(params, **config)
    raise ValueError(f"unknown optimizer {kind!r}")


def clip_grad_norm(params: Iterable[Tensor], max_norm: float, norm_type: float = 2.0) -> float:
    """Rescale all gradients so their global p-norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm_type = float(norm_type)
    if norm_type < 1:
        raise ValueError("norm_type must be >= 1 or inf")
    grads = [p for p in params if p.grad is not None]
    if not grads:
        return 0.0
    if math.isinf(norm_type):
        norm = max(float(np.abs(p.grad.data).max()) if p.grad.size else 0.0 for p in grads)
    elif norm_type == 2.0:
        norm = math.sqrt(sum(float(np.dot(p.grad.data.ravel().astype(np.float64),
                                          p.grad.data.ravel().astype(np.float64))) for p in grads))
    else:
        total = sum(float((np.abs(p.grad.data.astype(np.float64)) ** norm_type).sum()) for p in grads)
        norm = total ** (1.0 / norm_type)
    if norm > max_norm:
        coef = max_norm / norm
        for p in grads:
            p.grad = Tensor(p.grad.data * p.grad.dtype.type(coef), dtype=p.grad.dtype)
    return norm
