"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation computes its forward value eagerly with numpy
and records its parents plus a small context on the output tensor. Gradient
rules live in :data:`GRAD_RULES`, keyed by operation name, so each rule can be
audited (and, in tests, deliberately broken) in isolation.

Broadcasting is restricted to two cases: equal shapes, or one operand being
a 0-d scalar. Anything else must go through :func:`broadcast_to`, which has
its own gradient rule.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

GRAD_RULES: dict[str, Callable] = {}

_state = threading.local()


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised in anomaly mode when an operation produces NaN or inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by operation '{op}'")
        self.op = op


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _anomaly_enabled() -> bool:
    return getattr(_state, "anomaly", False)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def detect_anomaly():
    """Fail fast with the offending op name when any forward value is non-finite."""
    prev = _anomaly_enabled()
    _state.anomaly = True
    try:
        yield
    finally:
        _state.anomaly = prev


def register_grad(name: str):
    def deco(fn):
        GRAD_RULES[name] = fn
        return fn

    return deco


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "ctx", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if any(n <= 0 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.ctx = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        if data.dtype != DTYPE:
            data = data.astype(DTYPE)
        data.flags.writeable = False
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.op = None
        out.parents = ()
        out.ctx = None
        out.name = None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def set_data(self, arr: np.ndarray) -> None:
        """Replace the value (used by optimizers; the old array is left untouched)."""
        arr = np.array(arr, dtype=DTYPE)
        if arr.shape != self.data.shape:
            raise DimensionError(f"cannot replace data of shape {self.shape} with {arr.shape}")
        arr.flags.writeable = False
        self.data = arr

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar -----------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return sum_(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return mean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.array(x, dtype=DTYPE))


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], ctx=None) -> Tensor:
    out = Tensor._wrap(np.asarray(data, dtype=DTYPE))
    if _anomaly_enabled() and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(op)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = tuple(parents)
        out.ctx = ctx
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def tape(loss: Tensor) -> list[Tensor]:
    """Topologically ordered list of every grad-requiring node reachable from ``loss``.

    Parents always precede children; replaying gradient rules over the
    reversed list is exactly the chain rule.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    if grad is None:
        if loss.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != loss.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any tensor that requires grad")

    pending: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(tape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.op is None:
            continue
        parent_grads = GRAD_RULES[node.op](node.ctx, g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise DimensionError(
                    f"gradient rule '{node.op}' returned shape {pg.shape} for parent {p.shape}"
                )
            key = id(p)
            pending[key] = pending[key] + pg if key in pending else pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return a, b


def _unscalar(g: np.ndarray, shape) -> np.ndarray:
    return np.asarray(g.sum()).reshape(shape) if len(shape) == 0 and g.ndim else g


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    return _result(a.data + b.data, "add", (a, b), (a.shape, b.shape))


@register_grad("add")
def _add_grad(ctx, g):
    sa, sb = ctx
    return _unscalar(g, sa), _unscalar(g, sb)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    return _result(a.data - b.data, "sub", (a, b), (a.shape, b.shape))


@register_grad("sub")
def _sub_grad(ctx, g):
    sa, sb = ctx
    return _unscalar(g, sa), _unscalar(-g, sb)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    return _result(a.data * b.data, "mul", (a, b), (a.data, b.data))


@register_grad("mul")
def _mul_grad(ctx, g):
    x, y = ctx
    return _unscalar(g * y, x.shape), _unscalar(g * x, y.shape)


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    return _result(a.data / b.data, "div", (a, b), (a.data, b.data))


@register_grad("div")
def _div_grad(ctx, g):
    x, y = ctx
    return _unscalar(g / y, x.shape), _unscalar(-g * x / (y * y), y.shape)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, "neg", (x,))


@register_grad("neg")
def _neg_grad(ctx, g):
    return (-g,)


def scale(x, c: float) -> Tensor:
    """Multiply by a plain Python constant."""
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, "scale", (x,), c)


@register_grad("scale")
def _scale_grad(c, g):
    return (g * c,)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    if p == 0.0:
        return _result(np.ones_like(x.data), "power", (x,), (x.data, p))
    return _result(x.data**p, "power", (x,), (x.data, p))


@register_grad("power")
def _power_grad(ctx, g):
    x, p = ctx
    if p == 0.0:
        return (np.zeros_like(x),)
    return (g * p * x ** (p - 1.0),)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, "sigmoid", (x,), out)


@register_grad("sigmoid")
def _sigmoid_grad(s, g):
    return (g * s * (1.0 - s),)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, "exp", (x,), out)


@register_grad("exp")
def _exp_grad(e, g):
    return (g * e,)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return _result(np.log(x.data), "log", (x,), x.data)


@register_grad("log")
def _log_grad(x, g):
    return (g / x,)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(x.data)
    return _result(out, "sqrt", (x,), out)


@register_grad("sqrt")
def _sqrt_grad(r, g):
    return (g * 0.5 / r,)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, "tanh", (x,), out)


@register_grad("tanh")
def _tanh_grad(t, g):
    return (g * (1.0 - t * t),)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    d = x.data
    t = np.tanh(_GELU_C * (d + 0.044715 * d**3))
    return _result(0.5 * d * (1.0 + t), "gelu", (x,), (d, t))


@register_grad("gelu")
def _gelu_grad(ctx, g):
    d, t = ctx
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d * d)
    return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.maximum(x.data, 0.0), "relu", (x,), x.data > 0)


@register_grad("relu")
def _relu_grad(mask, g):
    return (g * mask,)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product of ``[..., m, k]`` and ``[..., k, n]`` with identical leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[:-2] != b.shape[:-2]
        or a.shape[-1] != b.shape[-2]
    ):
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, "matmul", (a, b), (a.data, b.data))


@register_grad("matmul")
def _matmul_grad(ctx, g):
    x, y = ctx
    return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for a {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise DimensionError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def sum_(x, axes=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axes(axes, x.ndim)
    out = np.sum(x.data, axis=ax, keepdims=keepdims)
    return _result(out, "sum", (x,), (x.shape, ax, keepdims))


@register_grad("sum")
def _sum_grad(ctx, g):
    shape, ax, keepdims = ctx
    if not keepdims:
        g = np.expand_dims(g, ax)
    return (np.broadcast_to(g, shape).copy(),)


def mean(x, axes=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axes(axes, x.ndim)
    n = int(np.prod([x.shape[a] for a in ax])) if ax else 1
    out = np.mean(x.data, axis=ax, keepdims=keepdims)
    return _result(out, "mean", (x,), (x.shape, ax, keepdims, n))


@register_grad("mean")
def _mean_grad(ctx, g):
    shape, ax, keepdims, n = ctx
    if not keepdims:
        g = np.expand_dims(g, ax)
    return (np.broadcast_to(g / n, shape).copy(),)


def mean_over_axes(x, axes) -> Tensor:
    """Average over the listed axes (temporal or spatial pooling)."""
    return mean(x, axes)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _result(out, "reshape", (x,), x.shape)


@register_grad("reshape")
def _reshape_grad(shape, g):
    return (g.reshape(shape),)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: invalid permutation {axes} for {x.ndim}-d tensor")
    return _result(np.transpose(x.data, axes), "transpose", (x,), axes)


@register_grad("transpose")
def _transpose_grad(axes, g):
    return (np.transpose(g, np.argsort(axes)),)


def broadcast_to(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; gradient sums over the expanded axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}") from exc
    return _result(out.copy(), "broadcast_to", (x,), x.shape)


@register_grad("broadcast_to")
def _broadcast_grad(shape, g):
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    ax = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if ax:
        g = g.sum(axis=ax, keepdims=True)
    return (g,)


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-d table (embedding lookup)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-d table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    return _result(table.data[ids], "take_rows", (table,), (table.shape, ids))


@register_grad("take_rows")
def _take_rows_grad(ctx, g):
    shape, ids = ctx
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(out, ids, g)
    return (out,)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of an empty sequence")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)
    return _result(out, "stack", ts, (axis, len(ts)))


@register_grad("stack")
def _stack_grad(ctx, g):
    axis, n = ctx
    return tuple(np.take(g, i, axis=axis) for i in range(n))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    return _result(out, "concat", ts, (axis, sizes))


@register_grad("concat")
def _concat_grad(ctx, g):
    axis, sizes = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def index_rows(x, idx) -> Tensor:
    """Select entries along axis 0 with an integer index array."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    return _result(x.data[idx], "index_rows", (x,), (x.shape, idx))


@register_grad("index_rows")
def _index_rows_grad(ctx, g):
    shape, idx = ctx
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(out, idx, g)
    return (out,)


# ---------------------------------------------------------------------------
# fused neural-net primitives
# ---------------------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, "softmax", (x,), (out, axis))


@register_grad("softmax")
def _softmax_grad(ctx, g):
    s, axis = ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = x.data - lse
    return _result(out, "log_softmax", (x,), (out, axis))


@register_grad("log_softmax")
def _log_softmax_grad(ctx, g):
    out, axis = ctx
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine parameters."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: affine shapes {weight.shape}/{bias.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * weight.data + bias.data
    return _result(out, "layer_norm", (x, weight, bias), (xhat, inv, weight.data))


@register_grad("layer_norm")
def _layer_norm_grad(ctx, g):
    xhat, inv, w = ctx
    lead = tuple(range(g.ndim - 1))
    gw = (g * xhat).sum(axis=lead)
    gb = g.sum(axis=lead)
    gx_hat = g * w
    gx = inv * (
        gx_hat
        - gx_hat.mean(axis=-1, keepdims=True)
        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, gw, gb


def normalize_rows(x) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean norm.

    A zero-norm vector raises instead of being clamped; a collapsed encoder
    should surface, not be papered over.
    """
    x = as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero-norm feature vector")
    out = x.data / norms
    return _result(out, "normalize_rows", (x,), (out, norms))


@register_grad("normalize_rows")
def _normalize_grad(ctx, g):
    y, n = ctx
    return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / n,)


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between two equal-length vectors (0-d result)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_similarity needs two equal-length vectors, got {a.shape} and {b.shape}")
    return sum_(mul(normalize_rows(a), normalize_rows(b)))


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between rows of ``a [N,d]`` and ``b [M,d]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix: incompatible shapes {a.shape} and {b.shape}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
