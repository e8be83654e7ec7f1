"""Small reverse-mode autodiff over numpy arrays.

Graphs are dynamic and single-shot: each op records its parents and a
closure mapping the output gradient to parent gradients, and ``backward``
walks the graph once in reverse topological order.  Interior nodes are
consumed by that walk; leaves (parameters) can be reused by new graphs.

Training runs in float32.  Arrays passed in as float64 stay float64, which
is how the finite-difference checks run.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

NORM_EPS = 1e-12

_state = threading.local()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphConsumedError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread (evaluation passes)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(values, np.ndarray) and np.issubdtype(values.dtype, np.floating):
                dtype = values.dtype
            else:
                dtype = np.float32
        arr = np.array(values, dtype=dtype)
        _check_finite(arr, "tensor construction")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(values, op)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.op = op
    out._consumed = False
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b, "add")
    return _make(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b, "sub")
    return _make(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b, "div")
    av, bv = a.values, b.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv

    def backward(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)

    return _make(out, (a, b), backward, "div")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.values * a.dtype.type(c), (a,), lambda g: (g * a.dtype.type(c),), "scale")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    av = a.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _make(out, (a,), lambda g: (g / av,), "log")


def abs_(a: Tensor) -> Tensor:
    av = a.values
    return _make(np.abs(av), (a,), lambda g: (g * np.sign(av),), "abs")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.values
    cdf = 0.5 * (1.0 + erf(x * (1.0 / math.sqrt(2.0))))
    pdf = np.exp(-0.5 * x * x) * (1.0 / math.sqrt(2.0 * math.pi))
    return _make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


# -- linear algebra and shape ------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 2 and av.ndim > 2:
            # shared weight matrix: fold the batch dims instead of a per-batch outer product
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(av @ bv, (a, b), backward, "matmul")


def dot(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Inner product along ``axis`` (batched over the others)."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes differ, {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        g = np.expand_dims(g, axis)
        return g * bv, g * av

    return _make((av * bv).sum(axis=axis), (a, b), backward, "dot")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of empty sequence")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def slice_(a: Tensor, idx) -> Tensor:
    """Basic (view) indexing only: ints and slices."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    for part in idx:
        if not (isinstance(part, (int, slice, np.integer)) or part is Ellipsis):
            raise ShapeError(f"slice supports ints, slices and Ellipsis, got {type(part).__name__}")
    out = a.values[idx]

    def backward(g):
        full = np.zeros_like(a.values)
        full[idx] = g
        return (full,)

    return _make(np.array(out), (a,), backward, "slice")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Mean over ``axis`` (all axes when None)."""
    out = a.values.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.values.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    inv = a.dtype.type(1.0 / count)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, a.shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


# -- normalizations ----------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.values
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.values
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), backward, "log_softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + a.dtype.type(eps))
    xhat = xc * inv_std

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv_std * (g - gm - xhat * gx),)

    return _make(xhat, (a,), backward, "layer_norm")


def l2_normalize(a: Tensor, axis: int = -1, eps: float = NORM_EPS) -> Tensor:
    """x / (||x|| + eps); the zero vector maps to the zero vector."""
    x = a.values
    r = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    denom = r + a.dtype.type(eps)
    y = x / denom
    safe_r = np.where(r > 0, r, 1.0)

    def backward(g):
        xg = (x * g).sum(axis=axis, keepdims=True)
        return (g / denom - x * xg / (safe_r * denom * denom),)

    return _make(y, (a,), backward, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = NORM_EPS) -> Tensor:
    """a.b / ((||a|| + eps)(||b|| + eps)) along ``axis``."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: shapes differ, {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    ra = np.sqrt((av * av).sum(axis=axis, keepdims=True))
    rb = np.sqrt((bv * bv).sum(axis=axis, keepdims=True))
    na, nb = ra + a.dtype.type(eps), rb + a.dtype.type(eps)
    s = (av * bv).sum(axis=axis, keepdims=True)
    c = s / (na * nb)
    safe_ra = np.where(ra > 0, ra, 1.0)
    safe_rb = np.where(rb > 0, rb, 1.0)

    def backward(g):
        g = np.expand_dims(g, axis)
        ga = g * (bv / (na * nb) - c * av / (safe_ra * na))
        gb = g * (av / (na * nb) - c * bv / (safe_rb * nb))
        return ga, gb

    return _make(np.squeeze(c, axis=axis), (a, b), backward, "cosine_similarity")


# -- reverse pass ------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Returns a map from leaf tensor to gradient and stores each gradient on
    ``leaf.grad``.  With ``wrt``, exactly those tensors are returned and any
    not reachable from ``loss`` get a zero gradient.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumedError("graph already used for backward; rebuild the forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    order = _topological(loss)
    leaves: list[Tensor] = []
    for node in reversed(order):
        g = grads.pop(id(node), None) if not node.is_leaf else grads.get(id(node))
        if node.is_leaf:
            if node.requires_grad:
                leaves.append(node)
            continue
        node._consumed = True
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._backward = None
        node._parents = ()

    result: dict[Tensor, np.ndarray] = {}
    for leaf in leaves:
        leaf.grad = grads.get(id(leaf), np.zeros_like(leaf.values))
        result[leaf] = leaf.grad
    if wrt is None:
        return result
    out = {}
    for t in wrt:
        out[t] = result[t] if t in result else np.zeros_like(t.values)
        if t not in result:
            t.grad = out[t]
    return out


def gradient_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-4) -> float:
    """Relative error between backward and central differences.

    ``fn`` maps Tensors to a scalar Tensor.  Inputs are promoted to float64.
    The error is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-10)
    over the gradients of all inputs stacked together, so an input whose true
    gradient is zero (e.g. an attention key bias) is judged on the scale of
    the whole gradient rather than on round-off.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(x, requires_grad=True) for x in arrays]
    analytic = backward(fn(*leaves), wrt=leaves)
    numerics = []
    for k, leaf in enumerate(leaves):
        numeric = np.zeros_like(arrays[k])
        flat = arrays[k].reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = orig - h
            fm = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        numerics.append(numeric.reshape(-1))
    a = np.concatenate([analytic[leaf].reshape(-1) for leaf in leaves])
    n = np.concatenate(numerics)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-10)
    return float(np.linalg.norm(a - n) / denom)
