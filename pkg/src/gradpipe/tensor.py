"""Dense CPU tensors with reverse-mode automatic differentiation.

Every differentiable operation that touches a tensor with ``requires_grad``
appends a :class:`Node` to the tape.  Nodes carry a global sequence number,
so the tape order is simply insertion order and :meth:`Tensor.backward`
replays the reachable nodes in reverse.

Gradients accumulate into ``leaf.grad`` until cleared, matching the usual
convention of eager deep-learning libraries.
"""

from __future__ import annotations

import contextlib
import io
import itertools
import math
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "RngState",
    "tensor",
    "zeros",
    "ones",
    "full",
    "uniform",
    "normal",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "clamp_max",
    "elementwise",
    "reduce",
    "reshape",
    "concat",
    "no_grad",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "manual_seed",
    "default_rng",
    "derive_seed",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "save_tensor",
    "load_tensor",
]

_MAX_ELEMENTS = 2**62

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_seq = itertools.count()


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the floating-point precision (e.g. float64 for gradient checks)."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def is_grad_enabled() -> bool:
    return _grad_enabled


# ---------------------------------------------------------------------------
# randomness


def derive_seed(*parts: int) -> int:
    """Hash integers into a 64-bit seed (used for per-evaluation streams)."""
    seq = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class RngState:
    """Counter-based random stream.

    Each call to :meth:`generator` hands out an independent Philox stream
    keyed by ``(seed, counter)`` and then bumps the counter, so a given
    ``(seed, counter)`` pair always reproduces the same draws.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int = 0, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def generator(self) -> np.random.Generator:
        key = self.seed | ((self.counter & 0xFFFFFFFFFFFFFFFF) << 64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, index: int) -> "RngState":
        return RngState(derive_seed(self.seed, index))

    def copy(self) -> "RngState":
        return RngState(self.seed, self.counter)

    def __repr__(self):
        return f"RngState(seed={self.seed}, counter={self.counter})"

    def __eq__(self, other):
        return isinstance(other, RngState) and (self.seed, self.counter) == (other.seed, other.counter)


_global_rng = RngState(0)


def manual_seed(seed: int) -> None:
    global _global_rng
    _global_rng = RngState(seed)


def default_rng() -> RngState:
    return _global_rng


@contextlib.contextmanager
def fork_rng(seed: int):
    """Run a block under a fresh global stream, restoring the previous one afterwards."""
    global _global_rng
    saved = _global_rng
    _global_rng = RngState(seed)
    try:
        yield _global_rng
    finally:
        _global_rng = saved


# ---------------------------------------------------------------------------
# core types


class Node:
    """One tape entry: the op name, its inputs and the closure computing input grads."""

    __slots__ = ("op", "inputs", "backward_fn", "seq")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_seq)

    def __repr__(self):
        return f"<Node {self.op} #{self.seq}>"


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind in "fc" or arr.dtype == object:
        return arr.astype(_default_dtype, copy=False)
    if arr.dtype.kind == "b":
        return arr.astype(_default_dtype)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        if requires_grad and self.data.dtype.kind != "f":
            raise TypeError("only floating point tensors can require gradients")
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self.node: Node | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return self.data.reshape(-1)[0].item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return self.node is None

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        body = np.array2string(self.data, precision=6, separator=", ")
        kind = "CPUDoubleType" if self.data.dtype == np.float64 else (
            "CPUFloatType" if self.data.dtype == np.float32 else "CPULongType")
        extra = f"[ grad_fn = <{self.node.op}> ]" if self.node is not None else ""
        return f"tensor({body})\n[ {kind}{{{','.join(map(str, self.shape))}}} ]{extra}"

    # -- autodiff ------------------------------------------------------------
    def backward(self, grad=None) -> None:
        if self.node is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that is not part of the tape")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError(f"backward() needs a scalar, got shape {self.shape}")
            g0 = np.ones_like(self.data)
        else:
            g0 = _as_array(grad, self.data.dtype)
            if g0.shape != self.shape:
                raise ValueError("gradient shape does not match tensor shape")
        if self.node is None:
            _accumulate(self, g0)
            return

        nodes = {}
        stack = [self.node]
        while stack:
            n = stack.pop()
            if n.seq in nodes:
                continue
            nodes[n.seq] = n
            for t in n.inputs:
                if t.node is not None and t.node.seq not in nodes:
                    stack.append(t.node)

        grads = {self.node.seq: g0}
        for seq in sorted(nodes, reverse=True):
            g = grads.pop(seq, None)
            if g is None:
                continue
            node = nodes[seq]
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.node is not None:
                    prev = grads.get(t.node.seq)
                    grads[t.node.seq] = gi if prev is None else prev + gi
                else:
                    _accumulate(t, gi)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return reduce(self, "sum", axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce(self, "mean", axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def clamp_max(self, max_value):
        return clamp_max(self, max_value)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = Tensor(g, dtype=t.data.dtype)
    else:
        t.grad = Tensor(t.grad.data + g, dtype=t.data.dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result, recording a tape node when any input needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None and like.data.dtype.kind == "f" else None
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# creation


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    if math.prod(shape) > _MAX_ELEMENTS:
        raise OverflowError(f"shape {shape} overflows the flat buffer")
    return shape


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def full(shape, value: float, requires_grad: bool = False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    return Tensor(np.full(shape, value, dtype=dtype or _default_dtype), requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return full(shape, 0.0, requires_grad, dtype)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return full(shape, 1.0, requires_grad, dtype)


def uniform(shape, low: float = 0.0, high: float = 1.0, rng: RngState | None = None,
            requires_grad: bool = False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    gen = (rng or default_rng()).generator()
    data = gen.uniform(low, high, size=shape).astype(dtype or _default_dtype)
    return Tensor(data, requires_grad)


def normal(shape, mean: float = 0.0, std: float = 1.0, rng: RngState | None = None,
           requires_grad: bool = False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    gen = (rng or default_rng()).generator()
    data = gen.normal(mean, std, size=shape).astype(dtype or _default_dtype)
    return Tensor(data, requires_grad)


# ---------------------------------------------------------------------------
# differentiable primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = (_wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = (_wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = (_wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = (_wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def clamp_max(a: Tensor, max_value: float) -> Tensor:
    """min(a, max_value); the gradient only flows where ``a < max_value``."""
    ad = a.data
    mask = ad < max_value

    def backward(g):
        return (g * mask,)

    return make_result(np.minimum(ad, np.asarray(max_value, dtype=ad.dtype)), (a,), backward, "clamp_max")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(a: Tensor, b, op: str) -> Tensor:
    if op == "clamp_max":
        return clamp_max(a, b)
    try:
        return _ELEMENTWISE[op](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    p = float(exponent)

    def backward(g):
        return (g * p * ad ** (p - 1),)

    return make_result(ad**p, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0
    return make_result(np.where(mask, ad, 0).astype(ad.dtype, copy=False), (a,),
                       lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    e = np.exp(ad[~pos])
    out[~pos] = e / (1.0 + e)
    return make_result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a rank-2 tensor")
    return make_result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def _norm_axes(axes, ndim: int) -> tuple | None:
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(a: Tensor, op: str = "sum", axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    shape = a.shape
    if op == "sum":
        out = a.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = a.data.mean(axis=axes, keepdims=keepdims)
        n = a.data.size if axes is None else math.prod(shape[i] for i in axes)
        scale = 1.0 / n if n else 0.0
    else:
        raise ValueError(f"unknown reduction {op!r}")
    out = np.asarray(out, dtype=a.data.dtype)

    def backward(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        g = np.broadcast_to(g * scale if scale != 1.0 else g, shape)
        return (np.ascontiguousarray(g),)

    return make_result(out, (a,), backward, op)


def _resolve_shape(shape, size: int) -> tuple:
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise ValueError("reshape allows at most one -1")
    known = math.prod(s for s in shape if s != -1)
    if any(s < -1 for s in shape):
        raise ValueError(f"invalid extent in {shape}")
    if -1 in shape:
        if known == 0 or size % known:
            raise ValueError(f"cannot reshape {size} elements into {shape}")
        shape = tuple(size // known if s == -1 else s for s in shape)
    elif known != size:
        raise ValueError(f"cannot reshape {size} elements into {shape}")
    return shape


def reshape(a: Tensor, shape) -> Tensor:
    target = _resolve_shape(shape, a.size)
    src = a.shape
    return make_result(a.data.reshape(target), (a,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ValueError(f"cannot concat shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# golden-file format: int64 rank, int64 extents, little-endian IEEE-754 payload


def tensor_to_bytes(t) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    header = struct.pack("<q", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return header + payload


def tensor_from_bytes(buf: bytes, dtype=None) -> Tensor:
    """Decode one record.  Without ``dtype`` the element width is inferred from the payload size."""
    if len(buf) < 8:
        raise ValueError("truncated tensor header")
    (rank,) = struct.unpack_from("<q", buf, 0)
    if rank < 0 or 8 + 8 * rank > len(buf):
        raise ValueError("corrupt tensor header")
    shape = struct.unpack_from(f"<{rank}q", buf, 8)
    n = math.prod(shape)
    payload = buf[8 + 8 * rank:]
    if dtype is None:
        if n == 0:
            dtype = np.float32
        elif len(payload) == 4 * n:
            dtype = np.float32
        elif len(payload) == 8 * n:
            dtype = np.float64
        else:
            raise ValueError("payload size does not match the header")
    dtype = np.dtype(dtype).newbyteorder("<")
    if len(payload) != dtype.itemsize * n:
        raise ValueError("payload size does not match the header")
    data = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    return Tensor(data.reshape(shape), dtype=data.dtype)


def save_tensor(path_or_file, t) -> None:
    data = tensor_to_bytes(t)
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "wb") as fh:
            fh.write(data)
    else:
        path_or_file.write(data)


def load_tensor(path_or_file) -> Tensor:
    if isinstance(path_or_file, io.IOBase) or hasattr(path_or_file, "read"):
        return tensor_from_bytes(path_or_file.read())
    with open(path_or_file, "rb") as fh:
        return tensor_from_bytes(fh.read())

