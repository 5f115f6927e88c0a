"""Layers and losses.

Modules follow the familiar eager-framework shape: attributes holding a
:class:`Parameter` or another :class:`Module` are registered automatically,
and parameter names are the dotted attribute path (``"0.weight"``,
``"fc.bias"``).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import functional as F
from .serialization import pack_state, unpack_state
from .tensor import RngState, Tensor, default_rng, get_default_dtype, no_grad


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)


def _uniform_param(shape, bound: float, rng: RngState | None) -> Parameter:
    gen = (rng or default_rng()).generator()
    return Parameter(gen.uniform(-bound, bound, size=shape).astype(get_default_dtype()))


class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        for store in ("_parameters", "_buffers", "_modules"):
            self.__dict__[store].pop(name, None)
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:
            object.__setattr__(self, name, value)

    def __getattr__(self, name):
        d = self.__dict__
        for store in ("_parameters", "_buffers", "_modules"):
            if store in d and name in d[store]:
                return d[store][name]
        raise AttributeError(f"{type(self).__name__!r} has no attribute {name!r}")

    def register_buffer(self, name: str, value: Tensor) -> None:
        self._buffers[name] = value

    def add_module(self, name: str, module: "Module") -> None:
        self._modules[name] = module

    # -- traversal -----------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, m in self._modules.items():
            yield from m.named_modules(f"{prefix}.{name}" if prefix else name)

    def children(self):
        return iter(self._modules.values())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._parameters.items():
                if id(p) in seen:
                    continue
                seen.add(id(p))
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, Tensor]]:
        for mod_name, mod in self.named_modules():
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- state -----------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> OrderedDict:
        sd = OrderedDict(self.named_parameters())
        sd.update(self.named_buffers())
        return sd

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = self.state_dict()
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, value in state.items():
            if name not in own:
                continue
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            if arr.shape != own[name].shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {own[name].shape}")
            own[name].data = np.array(arr, dtype=own[name].dtype, copy=True)

    def state_dict_bytes(self) -> bytes:
        return pack_state(self.state_dict())

    def load_state_dict_bytes(self, buf: bytes) -> None:
        tensors, _ = unpack_state(buf)
        self.load_state_dict(tensors)

    # -- calling -----------------------------------------------------------------
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def extra_repr(self) -> str:
        return ""

    def summary(self) -> str:
        lines = [f"An `nn_module` containing {self.parameter_count():,} parameters."]
        if self._modules:
            lines.append("  Modules")
            for name, m in self._modules.items():
                lines.append(f"* {name}: <{type(m).__name__}> #{m.parameter_count():,} parameters")
        return "\n".join(lines)

    def __repr__(self):
        inner = self.extra_repr()
        if not self._modules:
            return f"{type(self).__name__}({inner})"
        body = "\n".join(f"  ({n}): " + repr(m).replace("\n", "\n  ") for n, m in self._modules.items())
        return f"{type(self).__name__}({inner}\n{body}\n)"


class Identity(Module):
    def forward(self, x):
        return x


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng: RngState | None = None):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        bound = 1.0 / math.sqrt(self.in_features) if self.in_features else 0.0
        self.weight = _uniform_param((self.out_features, self.in_features), bound, rng)
        self.bias = _uniform_param((self.out_features,), bound, rng) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def extra_repr(self):
        return f"in_features={self.in_features}, out_features={self.out_features}"


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class Sigmoid(Module):
    def forward(self, x):
        return x.sigmoid()


class Dropout(Module):
    """Inverted dropout; identity in inference mode."""

    def __init__(self, p: float = 0.5, rng: RngState | None = None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = float(p)
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        gen = (self.rng or default_rng()).generator()
        keep = gen.random(x.shape) >= self.p
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.p)
        return x * Tensor(mask, dtype=x.dtype)

    def extra_repr(self):
        return f"p={self.p}"


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, rng: RngState | None = None):
        super().__init__()
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.kernel_size, self.stride, self.padding = int(kernel_size), int(stride), int(padding)
        bound = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = _uniform_param((out_channels, in_channels, kernel_size, kernel_size), bound, rng)
        self.bias = _uniform_param((out_channels,), bound, rng) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def extra_repr(self):
        return (f"{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"stride={self.stride}, padding={self.padding}")


class MaxPool2d(Module):
    def __init__(self, kernel_size: int, stride: int | None = None, padding: int = 0):
        super().__init__()
        self.kernel_size = int(kernel_size)
        self.stride = int(stride) if stride else self.kernel_size
        self.padding = int(padding)

    def forward(self, x):
        return F.max_pool2d(x, self.kernel_size, self.stride, self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization.

    Training mode normalizes with the biased batch variance and folds the
    unbiased variance into ``running_var``; inference mode uses the running
    statistics only.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(num_features, dtype=dtype))
        self.bias = Parameter(np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_mean", Tensor(np.zeros(num_features, dtype=dtype)))
        self.register_buffer("running_var", Tensor(np.ones(num_features, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.num_features:
            raise ValueError(f"batch_norm2d expects (B, {self.num_features}, H, W), got {x.shape}")
        c = self.num_features
        scale = self.weight.reshape(1, c, 1, 1)
        shift = self.bias.reshape(1, c, 1, 1)
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch_norm2d needs more than one sample per batch in training mode")
            mean = x.mean((0, 2, 3), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean((0, 2, 3), keepdims=True)
            xhat = centered / (var + self.eps).sqrt()
            n = x.size // c
            with no_grad():
                m = self.momentum
                bm = mean.data.reshape(c)
                bv = var.data.reshape(c) * (n / (n - 1))
                self.running_mean.data = ((1 - m) * self.running_mean.data + m * bm).astype(x.dtype)
                self.running_var.data = ((1 - m) * self.running_var.data + m * bv).astype(x.dtype)
        else:
            rm = Tensor(self.running_mean.data.reshape(1, c, 1, 1), dtype=x.dtype)
            rv = Tensor(self.running_var.data.reshape(1, c, 1, 1), dtype=x.dtype)
            xhat = (x - rm) / (rv + self.eps).sqrt()
        return xhat * scale + shift

    def extra_repr(self):
        return f"{self.num_features}, eps={self.eps}, momentum={self.momentum}"


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        if x.ndim < 2:
            raise ValueError(f"flatten needs rank >= 2, got {x.shape}")
        return x.reshape(x.shape[0], -1)


class TokenizerNum(Module):
    """Embeds each numeric feature j as ``x_j * W_j + b_j`` giving (B, F, d_token)."""

    def __init__(self, n_features: int, d_token: int, bias: bool = True, rng: RngState | None = None):
        super().__init__()
        self.n_features, self.d_token = int(n_features), int(d_token)
        bound = 1.0 / math.sqrt(d_token)
        self.weight = _uniform_param((n_features, d_token), bound, rng)
        self.bias = _uniform_param((n_features, d_token), bound, rng) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"tokenizer_num expects (B, {self.n_features}), got {x.shape}")
        out = x.reshape(x.shape[0], self.n_features, 1) * self.weight
        return out + self.bias if self.bias is not None else out


class TokenizerCateg(Module):
    """Per-level embedding lookup plus a per-feature bias."""

    def __init__(self, cardinalities: Sequence[int], d_token: int, bias: bool = True,
                 rng: RngState | None = None):
        super().__init__()
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.d_token = int(d_token)
        self.offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)
        bound = 1.0 / math.sqrt(d_token)
        self.embeddings = _uniform_param((sum(self.cardinalities), d_token), bound, rng)
        self.bias = _uniform_param((len(self.cardinalities), d_token), bound, rng) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        idx = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.int64)
        nf = len(self.cardinalities)
        if idx.ndim != 2 or idx.shape[1] != nf:
            raise ValueError(f"tokenizer_categ expects (B, {nf}), got {idx.shape}")
        card = np.asarray(self.cardinalities)
        if ((idx < 0) | (idx >= card)).any():
            raise IndexError("categorical index out of vocabulary")
        out = F.embedding(self.embeddings, idx + self.offsets)
        return out + self.bias if self.bias is not None else out


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        for i, m in enumerate(modules):
            self.add_module(str(i), m)

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i):
        return list(self._modules.values())[i]

    def forward(self, x):
        for m in self._modules.values():
            x = m(x)
        return x


def mlp(d_in: int, neurons: Sequence[int], d_out: int, activation=ReLU, p: float = 0.5,
        rng: RngState | None = None) -> Sequential:
    """linear -> activation -> dropout per latent layer, then a linear head."""
    layers: list[Module] = []
    prev = d_in
    for width in neurons:
        layers += [Linear(prev, width, rng=rng), activation(), Dropout(p, rng=rng)]
        prev = width
    layers.append(Linear(prev, d_out, rng=rng))
    return Sequential(*layers)


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossSpec:
    kind: str
    class_weight: tuple | None = None
    max_loss: float | None = None

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "mse", "winsorized_mse"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.class_weight is not None:
            if self.kind != "cross_entropy":
                raise ValueError("class_weight only applies to cross_entropy")
            if any(w <= 0 for w in self.class_weight):
                raise ValueError("class weights must be positive")
        if self.max_loss is not None:
            if self.kind != "winsorized_mse":
                raise ValueError("max_loss only applies to winsorized_mse")
            if self.max_loss <= 0:
                raise ValueError("max_loss must be positive")
        elif self.kind == "winsorized_mse":
            raise ValueError("winsorized_mse needs max_loss")


def cross_entropy(logits: Tensor, target, class_weight=None) -> Tensor:
    """Mean negative log-likelihood; with weights, a weighted mean normalized by the selected weights."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target).astype(np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != y.shape[0]:
        raise ValueError(f"cross_entropy expects (B, K) logits and B targets, got {logits.shape}, {y.shape}")
    k = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise IndexError(f"class index out of range [0, {k})")
    nll = F.pick(F.log_softmax(logits, axis=1), y) * -1.0
    if class_weight is None:
        return nll.mean()
    w = np.asarray(class_weight, dtype=logits.dtype)
    if w.shape != (k,):
        raise ValueError(f"expected {k} class weights, got {w.shape}")
    wi = w[y]
    return (nll * Tensor(wi / wi.sum(), dtype=logits.dtype)).sum()


def mse_loss(prediction: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target, dtype=prediction.dtype)
    if prediction.shape != target.shape:
        raise ValueError(f"mse expects equal shapes, got {prediction.shape} and {target.shape}")
    diff = prediction - target
    return (diff * diff).mean()


def winsorized_mse_loss(prediction: Tensor, target, max_loss: float) -> Tensor:
    if max_loss <= 0:
        raise ValueError("max_loss must be positive")
    return mse_loss(prediction, target).clamp_max(max_loss)


def loss_forward(spec: LossSpec, prediction: Tensor, target) -> Tensor:
    if spec.kind == "cross_entropy":
        return cross_entropy(prediction, target, spec.class_weight)
    if spec.kind == "mse":
        return mse_loss(prediction, target)
    return winsorized_mse_loss(prediction, target, spec.max_loss)


def state_dict_to_bytes(module: Module) -> bytes:
    return module.state_dict_bytes()


def state_dict_from_bytes(buf: bytes) -> OrderedDict:
    return unpack_state(buf)[0]
