"""Dense float32 tensors with a dynamic reverse-mode tape.

Scalar results (losses) are held in float64 so that bookkeeping on them,
such as mixing loss terms, does not lose precision.

Every op records its parents and a closure computing the vector-Jacobian
product; :meth:`Tensor.backward` walks the tape once in reverse topological
order and then releases it.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import _kernels

DTYPE = np.float32
SCALAR_DTYPE = np.float64


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class GraphError(RuntimeError):
    """Backward was requested on a tape that is missing or already consumed."""


class MissingGradientError(RuntimeError):
    """A trainable parameter reached the optimizer without a gradient."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, teacher passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_released", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        # scalars (losses) are kept in double precision; arrays are float32
        arr = arr.astype(SCALAR_DTYPE if arr.ndim == 0 else DTYPE, copy=False)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._released = False
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], vjp: Callable, op: str) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
            out.op = op
        return out

    # -- basic accessors -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only supported by a python scalar")
        return mul(self, 1.0 / float(other))

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    # -- reverse mode ----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf on the tape."""
        if self.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise GraphError("tape already consumed by a previous backward; re-run the forward pass")
        if not self.requires_grad:
            raise GraphError("loss is not connected to any tensor that requires grad")

        order = _topological_order(self)
        grads = {id(self): np.ones((), dtype=SCALAR_DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._vjp is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                parent_grads = node._vjp(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    pg = np.asarray(pg, dtype=parent.data.dtype)
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
            node._vjp = None
            node._parents = ()
            node._released = True


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(out, (a, b), vjp, "add")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) != 0:
        b = Tensor(b)
    if not isinstance(b, Tensor):
        s = SCALAR_DTYPE(b) if a.ndim == 0 else DTYPE(b)
        return Tensor._from_op(a.data * s, (a,), lambda g: (g * s,), "scale")
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), vjp, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, DTYPE(0))
    return Tensor._from_op(out, (x,), lambda g: (np.where(mask, g, DTYPE(0)),), "relu")


# -- reductions and shape ------------------------------------------------


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis, dtype=np.float64)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(DTYPE),)

    return Tensor._from_op(out, (x,), vjp, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    if out.size != x.size:
        raise ContractError(f"cannot reshape {old} to {tuple(shape)}")
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._from_op(out, (x,), lambda g: (g.transpose(inverse),), "permute")


def pick(x: Tensor, index) -> Tensor:
    """Select ``x[n, index[n]]`` from an N x K tensor."""
    idx = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ContractError(f"pick expects N x K and N indices, got {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[rows, idx] = g
        return (full,)

    return Tensor._from_op(x.data[rows, idx], (x,), vjp, "pick")


# -- network layers ------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation, NCHW input and OIHW weights."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ContractError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ContractError(f"conv2d kernel {weight.shape} does not fit padded input {x.shape}")
    if bias is not None and bias.shape != (o,):
        raise ContractError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    rows = _kernels.im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(o, c * kh * kw)
    y = rows @ wmat.T
    if bias is not None:
        y += bias.data
    out = y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        grows = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (grows.T @ rows).reshape(weight.shape) if weight.requires_grad else None
        gb = grows.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = _kernels.col2im(grows @ wmat, n, c, h, w, kh, kw, stride, pad)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, vjp, "conv2d")


def max_pool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pool; ties route the gradient to the first element."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractError(f"max_pool2 needs NCHW with even H, W; got {x.shape}")
    out, idx = _kernels.maxpool2_forward(x.data)

    def vjp(g):
        return (_kernels.maxpool2_backward(np.ascontiguousarray(g), idx),)

    return Tensor._from_op(out, (x,), vjp, "max_pool2")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ContractError(f"global_avg_pool needs NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h * w).mean(axis=2, dtype=np.float64).astype(DTYPE)
    scale = DTYPE(1.0 / (h * w))

    def vjp(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], x.shape).astype(DTYPE),)

    return Tensor._from_op(out, (x,), vjp, "global_avg_pool")


def upsample_nearest2(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ContractError(f"upsample_nearest2 needs NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), vjp, "upsample_nearest2")


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ContractError(f"dense shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ContractError(f"dense bias shape {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, vjp, "dense")


def softmax_with_temperature(logits: Tensor, T: float = 1.0) -> Tensor:
    """Softmax along the last axis of ``logits / T``, max-subtracted."""
    if not T > 0:
        raise ContractError(f"temperature must be positive, got {T}")
    z = logits.data / DTYPE(T)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    inv_t = DTYPE(1.0 / T)

    def vjp(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot) * inv_t,)

    return Tensor._from_op(p, (logits,), vjp, "softmax")


def log_softmax_with_temperature(logits: Tensor, T: float = 1.0) -> Tensor:
    if not T > 0:
        raise ContractError(f"temperature must be positive, got {T}")
    z = logits.data / DTYPE(T)
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    inv_t = DTYPE(1.0 / T)

    def vjp(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) * inv_t,)

    return Tensor._from_op(out, (logits,), vjp, "log_softmax")


# -- optimizer -----------------------------------------------------------


@dataclass
class OptimizerState:
    """Momentum buffers for SGD, keyed by parameter name."""

    learning_rate: float
    momentum: float = 0.0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState) -> OptimizerState:
    """One momentum-SGD update, in place: ``v = m*v + g; w = w - lr*v``."""
    lr = DTYPE(state.learning_rate)
    m = DTYPE(state.momentum)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise MissingGradientError(f"no gradient for trainable parameter {name!r}")
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        v = state.buffers.get(name)
        v = g.astype(DTYPE, copy=True) if v is None else m * v + g
        state.buffers[name] = v
        p.data = p.data - lr * v
    return state
