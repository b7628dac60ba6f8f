"""Minimal dense tensor with reverse-mode automatic differentiation.

The operator set is deliberately small: enough to express convolution,
attention, feed-forward and normalization layers plus the reshaping glue
between them. Broadcasting is limited to scalar-tensor combinations; every
other shape mix raises :class:`ShapeError`.
"""

from __future__ import annotations

import itertools
import os
import threading
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _accel

__all__ = [
    "ShapeError",
    "ContractError",
    "Tensor",
    "GradientTape",
    "no_grad",
    "backward",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "bmatmul",
    "linear",
    "conv2d",
    "gelu",
    "softmax",
    "layer_norm",
    "reshape",
    "permute",
    "pad",
    "slice_",
    "concat",
    "stack",
    "sum_",
    "mean",
    "dropout",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(RuntimeError):
    """A precondition of the differentiation machinery was violated."""


_DEBUG = os.environ.get("TIMES2D_DEBUG", "0") not in ("", "0")
_node_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, optimizer updates)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple
    backward: Callable


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # plain numbers adopt the tensor operand's dtype so float32 graphs stay float32
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return _as_tensor(a), _as_tensor(b)


def _make(data: np.ndarray, inputs: Sequence[Tensor], bwd: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.requires_grad = False
    if _DEBUG and np.issubdtype(data.dtype, np.floating) and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(next(_node_ids), op, tuple(inputs), bwd)
    return out


class GradientTape:
    """Ops reachable from an output, ordered so each op's inputs were produced earlier.

    Node ids come from a global counter at creation time, so sorting reachable
    outputs by id is a valid topological order of the recorded graph.
    """

    def __init__(self, entries: list[Tensor]):
        self.entries = entries

    @classmethod
    def from_output(cls, out: Tensor) -> "GradientTape":
        seen: set[int] = set()
        entries: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if t._node is None or id(t) in seen:
                continue
            seen.add(id(t))
            entries.append(t)
            stack.extend(t._node.inputs)
        entries.sort(key=lambda t: t._node.id)
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> list[str]:
        return [t._node.op for t in self.entries]


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into ``.grad`` of every leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = GradientTape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        node = out._node
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x`` and central differences."""
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - numeric) / max(abs(a), 1e-8))
    x.grad = None
    return worst


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting is allowed)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    return np.asarray(g.sum(), dtype=g.dtype) if _is_scalar(t) and g.ndim else g


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "mul")

    def bwd(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _make(a.data * b.data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def bmatmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over identical leading dims: [..., m, k] x [..., k, n]."""
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmatmul: cannot multiply {a.shape} by {b.shape}")

    def bwd(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), bwd, "bmatmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., in] @ w[in, out] + b[out]`` applied over all leading axes."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    y = x2 @ w.data
    if b is not None:
        y = y + b.data

    def bwd(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _make(y.reshape(*lead, w.shape[1]), inputs, bwd, "linear")


def _conv_padding(padding, kh: int, kw: int):
    if padding == "same":
        return ((kh - 1) // 2, kh - 1 - (kh - 1) // 2), ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)
    if padding == "valid":
        return (0, 0), (0, 0)
    ph, pw = padding
    return (ph, ph), (pw, pw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding="same") -> Tensor:
    """Stride-1 2D cross-correlation with zero padding.

    x: [B, C_in, H, W]; w: [C_out, C_in, kh, kw]; b: [C_out] or None.
    ``padding`` is ``"same"``, ``"valid"`` or a ``(pad_h, pad_w)`` pair.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = w.shape[2:]
    (pt, pb), (pl, pr) = _conv_padding(padding, kh, kw)
    H, W = x.shape[2:]
    if kh > H + pt + pb or kw > W + pl + pr:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out = _accel.conv2d_forward(xp, w.data)
    if b is not None:
        out += b.data[None, :, None, None]

    def bwd(g):
        dxp, dw = _accel.conv2d_backward(xp, w.data, g)
        dx = dxp[:, :, pt : pt + H, pl : pl + W]
        return (dx, dw) if b is None else (dx, dw, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    return _make(out, inputs, bwd, "conv2d")


# ---------------------------------------------------------------------------
# activations and normalization
# ---------------------------------------------------------------------------

_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(inner)
    y = 0.5 * d * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner),)

    return _make(y, (x,), bwd, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bwd, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y, (x, gamma, beta), bwd, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return _make(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "permute")


def pad(x: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` is one ``(before, after)`` pair per axis."""
    widths = tuple(tuple(w) for w in widths)
    if len(widths) != x.ndim:
        raise ShapeError(f"pad: {len(widths)} width pairs for shape {x.shape}")
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _make(np.pad(x.data, widths), (x,), lambda g: (g[index],), "pad")


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    y = x.data[index]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(np.array(y), (x,), bwd, "slice")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    ref = list(xs[0].shape)
    for t in xs[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {t.shape} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=axis), xs, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    for t in xs[1:]:
        if t.shape != xs[0].shape:
            raise ShapeError(f"stack: shapes {xs[0].shape} and {t.shape} differ")
    n = len(xs)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make(np.stack([t.data for t in xs], axis=axis), xs, bwd, "stack")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(y), (x,), bwd, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    y = x.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(np.asarray(y), (x,), bwd, "mean")
