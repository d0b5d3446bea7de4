"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tensor` records the :class:`Function` that produced it; calling
``backward`` on a scalar walks the graph in reverse topological order and
accumulates ``grad`` on every tensor that requires it. Every forward result
is checked for NaN/Inf.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Function",
    "NonFiniteError",
    "no_grad",
    "concat",
    "gelu",
    "layer_norm",
    "mse_loss",
    "dropout",
]

_GRAD_ENABLED = [True]
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class no_grad:
    """Context manager that skips graph construction (inference)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "ctx", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, ctx: "Function | None" = None, name: str = ""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            origin = type(ctx).__name__ if ctx is not None else "input"
            raise NonFiniteError(f"non-finite values produced by {origin} {name}".rstrip())
        self.grad: np.ndarray | None = None
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other): return Add.apply(self, _lift(other, self))
    def __radd__(self, other): return Add.apply(_lift(other, self), self)
    def __sub__(self, other): return Sub.apply(self, _lift(other, self))
    def __rsub__(self, other): return Sub.apply(_lift(other, self), self)
    def __mul__(self, other): return Mul.apply(self, _lift(other, self))
    def __rmul__(self, other): return Mul.apply(_lift(other, self), self)
    def __neg__(self): return Mul.apply(self, _lift(-1.0, self))
    def __truediv__(self, other): return Mul.apply(self, _lift(1.0 / other, self))
    def __matmul__(self, other): return MatMul.apply(self, other)
    def __getitem__(self, item): return Slice.apply(self, item=item)

    def reshape(self, *shape): return Reshape.apply(self, shape=shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return Transpose.apply(self, axes=axes)
    def sum(self, axis=None, keepdims=False): return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) * (1.0 / n)

    # graph ---------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
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
            if node.ctx is not None:
                for parent in node.ctx.parents:
                    if id(parent) not in seen:
                        stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.ctx is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.ctx.parents, node.ctx.backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.ctx is not None


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


class Function:
    """Base class: subclasses implement ``forward`` on arrays and ``backward``."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        ctx = cls(*tensors)
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        track = _GRAD_ENABLED[0] and any(_needs_grad(t) for t in tensors)
        return Tensor(out, ctx=ctx if track else None, name=cls.__name__)

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


class Add(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x + y

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x - y

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, g):
        return _unbroadcast(g * self.y, self.x.shape), _unbroadcast(g * self.x, self.y.shape)


class MatMul(Function):
    """Batched ``x @ w``; ``w`` may be a plain 2-d weight shared over the batch."""

    def forward(self, x, w):
        self.x, self.w = x, w
        return x @ w

    def backward(self, g):
        x, w = self.x, self.w
        gx = g @ np.swapaxes(w, -1, -2)
        if w.ndim == 2:
            gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gw = _unbroadcast(np.swapaxes(x, -1, -2) @ g, w.shape)
        return _unbroadcast(gx, x.shape), gw


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.axes)),)


class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.in_shape).copy(),)


class Slice(Function):
    def forward(self, x, item):
        self.in_shape, self.dtype, self.item = x.shape, x.dtype, item
        return x[item]

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=self.dtype)
        np.add.at(out, self.item, g) if _is_fancy(self.item) else out.__setitem__(self.item, g)
        return (out,)


def _is_fancy(item) -> bool:
    items = item if isinstance(item, tuple) else (item,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


class Concat(Function):
    def forward(self, *xs, axis):
        self.axis = axis
        self.bounds = np.cumsum([0] + [x.shape[axis] for x in xs])
        return np.concatenate(xs, axis=axis)

    def backward(self, g):
        out = []
        for a, b in zip(self.bounds[:-1], self.bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[self.axis] = slice(a, b)
            out.append(g[tuple(idx)])
        return tuple(out)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


_GELU_C = np.sqrt(2.0 / np.pi)


class Gelu(Function):
    """tanh approximation of GELU."""

    def forward(self, x):
        self.x = x
        x2 = x * x
        self.t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, g):
        x, t = self.x, self.t
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, g):
        xhat, inv, gamma = self.xhat, self.inv, self.gamma
        gsum = g.reshape(-1, g.shape[-1])
        dgamma = (gsum * xhat.reshape(gsum.shape)).sum(axis=0)
        dbeta = gsum.sum(axis=0)
        gx = g * gamma
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


class MSELoss(Function):
    def forward(self, pred, target):
        self.diff = pred - target
        return np.asarray(np.mean(self.diff**2), dtype=pred.dtype)

    def backward(self, g):
        d = 2.0 * self.diff / self.diff.size * g
        return d, -d


def mse_loss(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    return MSELoss.apply(pred, _lift(target, pred))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    if rng is None or p <= 0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(mask)
