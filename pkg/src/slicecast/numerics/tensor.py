"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a closure mapping the output gradient to one gradient
per parent. ``Tensor.backward`` walks the recorded graph once in reverse
topological order and accumulates leaf gradients into ``.grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "set_debug",
    "concat",
    "stack",
    "roll",
    "softmax",
    "layer_norm",
    "gelu",
    "relu",
    "mse_loss",
    "take_along_axis",
    "where_const",
]

_GRAD_ENABLED = True
_DEBUG = False


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. double backward)."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_debug(flag: bool) -> None:
    """Turn on finite-value checks after every op."""
    global _DEBUG
    _DEBUG = bool(flag)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}") from None


class Tensor:
    """A float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = Tensor(data)
        if _DEBUG and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced non-finite values")
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    # -- properties ---------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- backward --------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        The graph is released afterwards; a second call on the same output
        raises ``GraphError``.
        """
        if self._consumed:
            raise GraphError("backward() called twice on the same graph without a new forward pass")
        if not self.requires_grad:
            raise GraphError("tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() without an explicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.shape:
                raise ShapeError(f"backward: gradient shape {grad.shape} != output shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack_ = [(self, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._consumed = True
        self._consumed = True

    # -- elementwise arithmetic ------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        o = other if isinstance(other, Tensor) else Tensor(other)
        _broadcast_shape(self.shape, o.shape, "add")
        a_shape, b_shape = self.shape, o.shape
        return Tensor._make(
            self.data + o.data,
            (self, o),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        o = other if isinstance(other, Tensor) else Tensor(other)
        _broadcast_shape(self.shape, o.shape, "sub")
        a_shape, b_shape = self.shape, o.shape
        return Tensor._make(
            self.data - o.data,
            (self, o),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
            "sub",
        )

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        o = other if isinstance(other, Tensor) else Tensor(other)
        _broadcast_shape(self.shape, o.shape, "mul")
        a, b = self.data, o.data
        return Tensor._make(
            a * b,
            (self, o),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        o = other if isinstance(other, Tensor) else Tensor(other)
        _broadcast_shape(self.shape, o.shape, "div")
        a, b = self.data, o.data
        return Tensor._make(
            a / b,
            (self, o),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p: float) -> "Tensor":
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported")
        a = self.data
        return Tensor._make(a**p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    # -- linear algebra ------------------------------------------------------------
    def __matmul__(self, other) -> "Tensor":
        o = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, o.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
        _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")

        def back(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, o), back, "matmul")

    def matmul(self, other) -> "Tensor":
        return self @ other

    # -- reductions ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = int(np.prod([self.shape[i] for i in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ----------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
        return Tensor._make(out, (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inv),), "transpose")

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), back, "getitem")

    def broadcast_to(self, shape) -> "Tensor":
        old = self.shape
        try:
            out = np.broadcast_to(self.data, shape).copy()
        except ValueError:
            raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None
        return Tensor._make(out, (self,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_ensure(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input")
    ref = list(ts[0].shape)
    ax = axis % len(ref)
    for t in ts[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {tuple(ref)} and {tuple(s)} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return Tensor._make(np.concatenate([t.data for t in ts], axis=ax), ts, back, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_ensure(t) for t in tensors]
    return concat([t.reshape(t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts], axis=axis)


def roll(x: Tensor, shift: int, axis: int = 0) -> Tensor:
    """Circular shift; ``roll([1,2,3,4], 1) -> [4,1,2,3]``."""
    x = _ensure(x)
    return Tensor._make(np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, -shift, axis=axis),), "roll")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _ensure(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), back, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = _ensure(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx = (inv / n) * (n * g - g.sum(axis=-1, keepdims=True) - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    out = Tensor._make(xhat, (x,), back, "layer_norm")
    if gamma is not None:
        if gamma.shape != (n,):
            raise ShapeError(f"layer_norm: gamma shape {gamma.shape} does not match feature size ({n},)")
        out = out * gamma
    if beta is not None:
        if beta.shape != (n,):
            raise ShapeError(f"layer_norm: beta shape {beta.shape} does not match feature size ({n},)")
        out = out + beta
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth everywhere, which keeps gradient checks clean)."""
    x = _ensure(x)
    a = x.data
    inner = _GELU_C * (a + 0.044715 * a**3)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * d_inner),)

    return Tensor._make(out, (x,), back, "gelu")


def relu(x: Tensor) -> Tensor:
    x = _ensure(x)
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def mse_loss(pred: Tensor, target) -> Tensor:
    pred = _ensure(pred)
    t = _as_array(target)
    if pred.shape != t.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} != target shape {t.shape}")
    diff = pred.data - t
    n = diff.size
    return Tensor._make(np.asarray(np.mean(diff * diff)), (pred,), lambda g: (g * 2.0 * diff / n,), "mse_loss")


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Differentiable ``np.take_along_axis``; indices are constants."""
    x = _ensure(x)
    idx = np.asarray(indices)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        # put_along_axis overwrites duplicates, so scatter-add explicitly
        full_idx = list(np.indices(idx.shape, sparse=True))
        full_idx[axis % len(shape)] = idx
        np.add.at(out, tuple(full_idx), g)
        return (out,)

    return Tensor._make(np.take_along_axis(x.data, idx, axis=axis), (x,), back, "take_along_axis")


def where_const(mask: np.ndarray, x: Tensor, fill: float) -> Tensor:
    """``x`` where ``mask`` holds, constant ``fill`` elsewhere."""
    x = _ensure(x)
    m = np.asarray(mask, dtype=bool)
    return Tensor._make(np.where(m, x.data, fill), (x,), lambda g: (_unbroadcast(np.where(m, g, 0.0), x.shape),), "where")
