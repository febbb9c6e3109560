"""Dense float64 tensors with reverse-mode differentiation.

A small define-by-run engine: every operation wraps its result in a
:class:`Tensor` that records its parent tensors and a vector-Jacobian
callback, and :func:`backward` replays the recorded graph in reverse
topological order.  The op vocabulary is intentionally minimal, just
enough to express small dense recognizers, contrastive embedders and
signed-gradient input attacks.

Broadcasting is restricted to scalar-with-tensor; anything else needs an
explicit :func:`reshape`.  All data is float64.  Graph construction and
backward are single-threaded per graph; independent graphs may be used
concurrently (there is no global state).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "add",
    "subtract",
    "multiply",
    "matmul",
    "relu",
    "tanh",
    "log_softmax",
    "mean",
    "total",
    "clamp",
    "sign",
    "gather",
    "concat",
    "reshape",
    "sqrt",
    "custom_op",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array plus the graph edge that produced it.

    Leaf tensors (``op == "leaf"``) have no parents; op outputs carry a
    ``vjp`` callback mapping the upstream gradient to one gradient array
    per parent (or ``None`` for non-differentiable parents).
    """

    __slots__ = ("data", "parents", "op", "vjp")

    def __init__(self, data, parents=(), op="leaf", vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        if op != "leaf" and not np.isfinite(arr).all():
            raise FloatingPointError(f"op '{op}' produced non-finite values")
        self.data = arr
        self.parents = tuple(parents)
        self.op = op
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Wrap array-like data as a leaf tensor."""
    return Tensor(data)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.integer, np.floating, np.ndarray)):
        return Tensor(x)
    raise TypeError(f"expected Tensor, array or scalar, got {type(x).__name__}")


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Only scalar-with-tensor broadcasting exists, so a mismatch means the
    # operand was a scalar: collapse the gradient back to it.
    if np.shape(g) == tuple(shape):
        return g
    return np.asarray(np.sum(g))


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, (a, b), "add", vjp)


def subtract(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "subtract")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, (a, b), "subtract", vjp)


def multiply(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "multiply")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, (a, b), "multiply", vjp)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} differ")
    a2 = a.data if a.data.ndim == 2 else a.data[None, :]
    b2 = b.data if b.data.ndim == 2 else b.data[:, None]

    def vjp(g):
        g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
        return (g2 @ b2.T).reshape(a.shape), (a2.T @ g2).reshape(b.shape)

    return Tensor(a.data @ b.data, (a, b), "matmul", vjp)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, 0.0), (a,), "relu", vjp)


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, (a,), "tanh", vjp)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    a = _coerce(a)
    if a.data.ndim < 1:
        raise ShapeError("log_softmax: requires at least one axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor(out, (a,), "log_softmax", vjp)


def mean(a, axis: int) -> Tensor:
    """Arithmetic mean along one axis."""
    a = _coerce(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"mean: axis {axis} out of range for shape {a.shape}")
    axis = axis % a.data.ndim
    n = a.shape[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis) / n,)

    return Tensor(a.data.mean(axis=axis), (a,), "mean", vjp)


def total(a) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = _coerce(a)

    def vjp(g):
        return (np.full(a.shape, g),)

    return Tensor(a.data.sum(), (a,), "total", vjp)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Elementwise clip to [lo, hi]; gradient passes through inside the range."""
    a = _coerce(a)
    if lo > hi:
        raise ValueError(f"clamp: lo {lo} exceeds hi {hi}")
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * inside,)

    return Tensor(np.clip(a.data, lo, hi), (a,), "clamp", vjp)


def sign(a) -> Tensor:
    """Elementwise sign; treated as a constant in backward (zero gradient)."""
    a = _coerce(a)

    def vjp(g):
        return (np.zeros(a.shape),)

    return Tensor(np.sign(a.data), (a,), "sign", vjp)


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select slices of `a` along `axis` by an integer index vector."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather: indices must be 1-D, got shape {idx.shape}")
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"gather: axis {axis} out of range for shape {a.shape}")
    axis = axis % a.data.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise IndexError(f"gather: indices out of range for axis of size {a.shape[axis]}")
    locator = tuple(idx if d == axis else slice(None) for d in range(a.data.ndim))

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, locator, g)
        return (out,)

    return Tensor(np.take(a.data, idx, axis=axis), (a,), "gather", vjp)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    ndim = parts[0].data.ndim
    if ndim == 0:
        raise ShapeError("concat: scalars cannot be concatenated")
    axis = axis % ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {parts[0].shape} vs {p.shape}")
        for d in range(ndim):
            if d != axis and p.shape[d] != parts[0].shape[d]:
                raise ShapeError(f"concat: shapes {parts[0].shape} and {p.shape} differ off-axis")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat", vjp)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def vjp(g):
        return (np.reshape(g, a.shape),)

    return Tensor(a.data.reshape(shape), (a,), "reshape", vjp)


def sqrt(a) -> Tensor:
    """Elementwise square root.  Caller must keep inputs strictly positive
    wherever gradients are needed (the derivative blows up at zero)."""
    a = _coerce(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return Tensor(out, (a,), "sqrt", vjp)


def custom_op(data, parents: Iterable[Tensor], name: str, vjp: Callable) -> Tensor:
    """Insert a hand-differentiated operation into the graph.

    `vjp(upstream_grad)` must return one gradient array per parent (or
    ``None`` for parents that should not receive gradient).
    """
    return Tensor(data, tuple(parents), name, vjp)


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor]) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar loss.

    Returns ``d(loss)/d(t)`` for every tensor in `wrt`, each with the same
    shape as its tensor.  Tensors not on any path to the loss get an exact
    zero gradient.  Traversal visits each graph node once, in a fixed
    order, so repeated calls on identical graphs are bit-identical.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward: loss must be a Tensor")
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    wrt = list(wrt)
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return {t: Tensor(grads.get(id(t), np.zeros(t.shape))) for t in wrt}


def grad_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative disagreement between reverse-mode and central differences.

    `fn` must map a tensor to a scalar tensor and be pure (it is re-invoked
    at perturbed copies of `point`).  The per-coordinate relative error is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0)
    out = fn(x)
    if out.data.shape != ():
        raise ShapeError(f"grad_check: fn must return a scalar, got shape {out.data.shape}")
    g_ad = backward(out, [x])[x].data
    g_fd = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        f_plus = float(fn(Tensor(x0)).data)
        flat[i] = saved - step
        f_minus = float(fn(Tensor(x0)).data)
        flat[i] = saved
        g_fd.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
    denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
    if g_ad.size == 0:
        return 0.0
    return float(np.max(np.abs(g_ad - g_fd) / denom))
