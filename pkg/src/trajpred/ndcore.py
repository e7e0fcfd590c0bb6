"""Dense float64 tensors with tape-based reverse-mode autodiff.

Everything downstream (token pooling, attention blocks, the predictor, the
text encoder, the loss) is built from the primitives here.  Forward math is
plain numpy; every primitive that can sit on a gradient path records a tape
entry so ``backward`` can replay the graph in reverse.

Design constraints honoured throughout:
  * float64 accumulation everywhere (checkpoints may downcast to float32),
  * deterministic: identical inputs produce bitwise-identical outputs,
  * a node consumed by several branches accumulates the sum of all branch
    gradients.
"""

from __future__ import annotations

import math
from contextvars import ContextVar
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "backward",
    "linearize",
    "add",
    "mul",
    "neg",
    "sub",
    "scale",
    "add_scalar",
    "matmul",
    "reshape",
    "swapaxes",
    "concat",
    "stack",
    "slice_rows",
    "expand_leading",
    "tsum",
    "tmean",
    "exp",
    "log",
    "gelu",
    "softmax",
    "layer_norm",
    "multi_head_attention",
    "cosine_similarity",
    "cosine_matrix",
    "bce_with_logits",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


_GRAD_ENABLED: ContextVar[bool] = ContextVar("trajpred_grad_enabled", default=True)


class no_grad:
    """Context manager that disables tape recording (evaluation fast path)."""

    def __enter__(self):
        self._token = _GRAD_ENABLED.set(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.reset(self._token)
        return False


class _TapeEntry:
    """One recorded operation: inputs, op id, and the gradient rule.

    ``backward`` maps the output gradient to one gradient per input (``None``
    for inputs that are not differentiable arguments).
    """

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """Dense n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_entry")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._entry: _TapeEntry | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    # operator sugar used by the model code
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: Tensor, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Attach a tape entry to ``out`` when recording is on and any input
    participates in a gradient path."""
    if _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._entry = _TapeEntry(op, inputs, backward_fn)
    return out


def linearize(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` through the tape, inputs-first.

    The returned order is topological: every input of an entry appears
    before the entry's output.  ``backward`` walks it exactly once in
    reverse.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._entry is not None:
            for parent in node._entry.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor that contributed to a scalar loss.

    Multiple uses of the same node accumulate additively.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = linearize(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        entry = node._entry
        if entry is None or node.grad is None:
            continue
        grads = entry.backward(node.grad)
        for parent, g in zip(entry.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                # own a fresh buffer: g may be a view into another grad
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record("neg", out, (a,), lambda g: (-g,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _record("scale", out, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    return _record("add_scalar", out, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with optional stacked leading dimensions."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", out, (a, b), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(a.data.swapaxes(ax1, ax2).copy())
    return _record("swapaxes", out, (a,), lambda g: (g.swapaxes(ax1, ax2),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]

    def bw(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(pieces)

    return _record("concat", out, tuple(ts), bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {n} rows")
    out = Tensor(a.data[start:stop].copy())

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record("slice_rows", out, (a,), bw)


def expand_leading(a: Tensor, n: int) -> Tensor:
    """Replicate ``a`` along a new leading axis of extent ``n``."""
    out = Tensor(np.broadcast_to(a.data, (n,) + a.shape).copy())
    return _record("expand_leading", out, (a,), lambda g: (g.sum(axis=0),))


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record("sum", out, (a,), bw)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _record("exp", out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record("log", out, (a,), lambda g: (g / a.data,))


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (keeps the package free of scipy)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = Tensor(0.5 * x * (1.0 + t))

    def bw(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return _record("gelu", out, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; each slice along ``axis`` sums to 1."""
    ax = axis if axis >= 0 else a.ndim + axis
    if not (0 <= ax < a.ndim):
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(y)

    def bw(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax", out, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), "
            f"got gain {gain.shape} and bias {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bw(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record("layer_norm", out, (a, gain, bias), bw)


def multi_head_attention(q: Tensor, kv: Tensor, params, heads: int,
                         mask: str | None = None) -> Tensor:
    """Scaled dot-product attention with per-head 1/sqrt(d/heads) scaling.

    ``q`` is [..., Lq, d] and ``kv`` is [..., Lk, d] with matching leading
    dims.  ``params`` carries wq/bq, wk/bk, wv/bv, wo/bo projection tensors.
    ``mask`` is None throughout this artifact; "causal" is supported for
    completeness.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    if mask not in (None, "none", "causal"):
        raise ValueError(f"unknown mask mode {mask!r}")
    dh = d // heads
    lq, lk = q.shape[-2], kv.shape[-2]
    lead = q.shape[:-2]

    def split_heads(x: Tensor, length: int) -> Tensor:
        x = reshape(x, lead + (length, heads, dh))
        return swapaxes(x, -2, -3)  # [..., heads, L, dh]

    qp = split_heads(add(matmul(q, params.wq), params.bq), lq)
    kp = split_heads(add(matmul(kv, params.wk), params.bk), lk)
    vp = split_heads(add(matmul(kv, params.wv), params.bv), lk)

    scores = scale(matmul(qp, swapaxes(kp, -1, -2)), 1.0 / math.sqrt(dh))
    if mask == "causal":
        if lq != lk:
            raise ShapeError("causal mask requires Lq == Lk")
        bias = np.triu(np.full((lq, lk), -1e30), k=1)
        scores = add(scores, Tensor(bias))
    weights = softmax(scores, axis=-1)
    mixed = matmul(weights, vp)  # [..., heads, Lq, dh]
    merged = reshape(swapaxes(mixed, -2, -3), lead + (lq, d))
    return add(matmul(merged, params.wo), params.bo)


# ---------------------------------------------------------------------------
# similarity and loss primitives (custom gradient rules)
# ---------------------------------------------------------------------------

def cosine_matrix(h: Tensor, e: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarity: rows of ``h`` [N,d] against rows of
    ``e`` [C,d].  Each norm is guarded by ``eps`` so zero vectors yield 0
    with finite gradients."""
    if h.ndim != 2 or e.ndim != 2 or h.shape[1] != e.shape[1]:
        raise ShapeError(f"cosine_matrix needs [N,d] and [C,d], got {h.shape}, {e.shape}")
    nh = np.linalg.norm(h.data, axis=1)
    ne = np.linalg.norm(e.data, axis=1)
    d1 = nh + eps
    d2 = ne + eps
    s = (h.data @ e.data.T) / (d1[:, None] * d2[None, :])
    out = Tensor(s)

    def bw(g):
        gp = g / (d1[:, None] * d2[None, :])
        # unit directions with an exact-zero guard (true limit at the origin)
        uh = np.divide(h.data, nh[:, None], out=np.zeros_like(h.data), where=nh[:, None] > 0)
        ue = np.divide(e.data, ne[:, None], out=np.zeros_like(e.data), where=ne[:, None] > 0)
        dh = gp @ e.data - ((g * s).sum(axis=1) / d1)[:, None] * uh
        de = gp.T @ h.data - ((g * s).sum(axis=0) / d2)[:, None] * ue
        return dh, de

    return _record("cosine_matrix", out, (h, e), bw)


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-8) -> Tensor:
    """Scalar cosine similarity u.v / ((|u|+eps)(|v|+eps)); differentiable."""
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal 1-d vectors, got {u.shape}, {v.shape}")
    m = cosine_matrix(reshape(u, (1, u.shape[0])), reshape(v, (1, v.shape[0])), eps=eps)
    return reshape(m, ())


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(s: Tensor, y: np.ndarray) -> Tensor:
    """Mean multi-label binary cross-entropy over all logits.

    Uses the stable form max(s,0) - s*y + log1p(exp(-|s|)) so saturated
    logits neither overflow nor go NaN.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != s.shape:
        raise ShapeError(f"labels shape {y.shape} != logits shape {s.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_with_logits labels must be binary (0 or 1)")
    x = s.data
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(per.mean())
    n = x.size

    def bw(g):
        return (g * (_sigmoid(x) - y) / n,)

    return _record("bce_with_logits", out, (s,), bw)
