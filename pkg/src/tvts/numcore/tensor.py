"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation builds a node holding its parents and a
closure that maps the output gradient onto gradients for each parent.
``Tensor.backward`` walks the nodes in reverse topological order.

Arrays are numpy ndarrays (row-major). Elementwise binary ops follow numpy
broadcasting; the backward pass sums gradients back onto the original shape.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from tvts.errors import ContractError, DimensionError, NumericError

DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32


def get_dtype() -> type:
    return _default_dtype


def set_dtype(name: str) -> None:
    global _default_dtype
    if name not in DTYPES:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(DTYPES)}")
    _default_dtype = DTYPES[name]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for newly created tensors."""
    global _default_dtype
    prev = _default_dtype
    set_dtype(name)
    try:
        yield
    finally:
        _default_dtype = prev


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no tape inside the block (evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    # -- metadata -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- autodiff -------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every traced node."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), back)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    c = np.sqrt(2.0 / np.pi)
    xd = x.data
    inner = c * (xd + 0.044715 * xd ** 3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def back(g):
        dinner = c * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _node(out.astype(xd.dtype, copy=False), (x,), back)


def stop_gradient(x: Tensor) -> Tensor:
    """Same values as ``x``; nothing flows back through the result."""
    return Tensor(x.data)


# -- reductions and shape ops ------------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out, dtype=x.dtype), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    return _node(np.broadcast_to(x.data, shape), (x,), lambda g: (_unbroadcast(g, x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, back)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out, copy=basic), (x,), back)


# -- linear algebra ---------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    shared_weight = b.ndim == 2 and a.ndim > 2
    if shared_weight:
        # one GEMM instead of a stack of small ones
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            if shared_weight:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(out, (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- normalisation and probabilities ------------------------------------------
def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} received non-finite input")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def back(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            gh = g * gain.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _node(out.astype(xd.dtype, copy=False), (x, gain, bias), back)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = xd / denom

    def back(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / denom,)

    return _node(out, (x,), back)


def cross_entropy_logits(logits: Tensor, target) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_logits expects [b, K] logits, got {logits.shape}")
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if target.shape[0] != b:
        raise DimensionError(f"{b} logit rows but {target.shape[0]} targets")
    if np.any(target < 0) or np.any(target >= k):
        raise IndexError(f"targets must lie in [0, {k}), got {target.tolist()}")
    lsm = log_softmax(logits, axis=-1)
    picked = getitem(lsm, (np.arange(b), target))
    return mul(tsum(picked), -1.0 / b)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """``softmax(q k^T / sqrt(dh)) v`` over the last two axes.

    Leading axes (heads, batch, groups) are treated as batch dimensions. With
    ``causal`` set, query ``i`` only sees keys ``j <= i``.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if causal:
        n_q, n_k = s.shape[-2], s.shape[-1]
        future = np.triu(np.ones((n_q, n_k), dtype=bool), k=1)
        s = np.where(future, -np.inf, s)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    p = p.astype(q.dtype, copy=False)
    out = p @ v.data

    def back(g):
        gv = np.swapaxes(p, -1, -2) @ g if v.requires_grad else None
        gq = gk = None
        if q.requires_grad or k.requires_grad:
            gp = g @ np.swapaxes(v.data, -1, -2)
            gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
            if q.requires_grad:
                gq = gs @ k.data
            if k.requires_grad:
                gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    return _node(out, (q, k, v), back)
