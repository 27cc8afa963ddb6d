"""Dense real tensors with reverse-mode automatic differentiation.

Each operation returns a fresh :class:`Tensor`. When any input requires a
gradient the result keeps references to its parents and a closure mapping
the output gradient to one gradient per parent. :meth:`Tensor.backward`
visits that graph once, in reverse topological order, and then releases it.

Arrays held by tensors are marked read-only, so no operation can mutate its
inputs. Leading batch axes are supported by every op; the extents quoted in
docstrings refer to the trailing axes.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, GraphError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "linear",
    "relu",
    "exp",
    "concat",
    "softmax",
    "softmax_rows",
    "layer_norm",
    "conv2d",
    "max_pool2d",
    "avg_pool2d",
    "backward",
    "no_grad",
]

_state = threading.local()


def _recording() -> bool:
    return not getattr(_state, "no_grad", False)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside this block (evaluation only)."""
    prev = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = prev

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _float_array(value, dtype=None) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A read-only n-d float array that can record how it was computed."""

    __slots__ = ("_data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = _float_array(data, dtype)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"
        self._consumed = False

    @classmethod
    def _result(cls, arr: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
        out = cls.__new__(cls)
        arr = np.asarray(arr)
        arr.setflags(write=False)
        out._data = arr
        out.grad = None
        out.op = op
        out._consumed = False
        if _recording() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self.size == 1 else float(self._data)

    def detach(self) -> Tensor:
        return Tensor._result(self._data, (), None, "detach")

    def assign_(self, value: np.ndarray) -> None:
        """Replace the stored values of a leaf (optimizer updates only)."""
        if self._backward is not None:
            raise GraphError("assign_ is only allowed on leaf tensors")
        value = np.array(value, dtype=self._data.dtype)
        if value.shape != self._data.shape:
            raise ShapeError(f"cannot assign shape {value.shape} to tensor of shape {self.shape}")
        value.setflags(write=False)
        self._data = value

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other ** -1.0)
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # -- method forms ---------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self) -> Tensor:
        return self.swapaxes(-1, -2)

    def relu(self) -> Tensor:
        return relu(self)

    def backward(self) -> dict:
        return backward(self)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _promote(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _promote(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), back, "add")


def mul(a, b) -> Tensor:
    a, b = _promote(a, b)
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad * bd, (a, b), back, "mul")


def power(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    out = xd**exponent

    def back(g):
        return (g * exponent * xd ** (exponent - 1),)

    return Tensor._result(out, (x,), back, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return Tensor._result(out, (x,), lambda g: (g * (out > 0),), "relu")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return Tensor._result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def take(x: Tensor, index) -> Tensor:
    src_shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(x.data[index], (x,), back, "index")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(out, tensors, back, "concat")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _expand_grad(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(g, shape)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    return Tensor._result(out, (x,), lambda g: (_expand_grad(g, src, axis, keepdims),), "sum")


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size // max(out.size, 1)
    return Tensor._result(out, (x,), lambda g: (_expand_grad(g / count, src, axis, keepdims),), "mean")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast.

    Backward: dA = dC @ B^T and dB = A^T @ dC.
    """
    a, b = _promote(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(np.matmul(ad, bd), (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with the bias broadcast over rows."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), weight), (weight.shape[1],))
    else:
        out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# normalisation / attention helpers
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax. Entries where ``mask`` is True get weight 0."""
    z = x.data
    if mask is not None:
        z = np.where(mask, -np.inf, z)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._result(s, (x,), back, "softmax")


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=-1)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gamma.shape}/bias {beta.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out, (x, gamma, beta), back, "layer_norm")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is ``c_in x h x w`` or ``n x c_in x h x w``; ``kernels`` is
    ``c_out x c_in x kh x kw``.
    """
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks, input {x.shape}, kernels {kernels.shape}")
    c_in = x.shape[-3]
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernels expect {kc}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    h, w = x.shape[-2:]
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1 or h + 2 * ph < kh or w + 2 * pw < kw:
        raise ConfigError(f"conv2d: output extent {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")

    xd = x.data[None] if unbatched else x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    wd = kernels.data
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g4 = g[None] if unbatched else g
        gx = gk = gb = None
        if x.requires_grad:
            gcols = np.tensordot(g4, wd, axes=([1], [0]))  # n, ho, wo, c, kh, kw
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += gcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
            if unbatched:
                gx = gx[0]
        if kernels.requires_grad:
            gk = np.tensordot(g4, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None:
            gb = g4.sum(axis=(0, 2, 3))
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._result(out[0] if unbatched else out, parents, back, "conv2d")


def _pool_windows(x: Tensor, window, stride):
    kh, kw = _pair(window)
    sh, sw = _pair(window if stride is None else stride)
    h, w = x.shape[-2:]
    if kh > h or kw > w:
        raise ConfigError(f"pool window {kh}x{kw} larger than input {h}x{w}")
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    win = sliding_window_view(x.data, (kh, kw), axis=(-2, -1))[..., ::sh, ::sw, :, :][..., :ho, :wo, :, :]
    return win.reshape(win.shape[:-2] + (kh * kw,)), (kh, kw, sh, sw, ho, wo)


def max_pool2d(x: Tensor, window, stride=None) -> Tensor:
    """Window-wise maximum over the last two axes.

    The gradient goes to the first maximal element in row-major order.
    """
    flat, (kh, kw, sh, sw, ho, wo) = _pool_windows(x, window, stride)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        for k in range(kh * kw):
            i, j = divmod(k, kw)
            gx[..., i : i + sh * ho : sh, j : j + sw * wo : sw] += g * (arg == k)
        return (gx,)

    return Tensor._result(out, (x,), back, "max_pool2d")


def avg_pool2d(x: Tensor, window, stride=None) -> Tensor:
    flat, (kh, kw, sh, sw, ho, wo) = _pool_windows(x, window, stride)
    out = flat.mean(axis=-1)

    def back(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        share = g / (kh * kw)
        for i in range(kh):
            for j in range(kw):
                gx[..., i : i + sh * ho : sh, j : j + sw * wo : sw] += share
        return (gx,)

    return Tensor._result(out, (x,), back, "avg_pool2d")


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a mapping from leaf tensor to the gradient contributed by this
    call. The graph is released afterwards; calling again on the same root
    raises :class:`GraphError`.
    """
    if loss._consumed:
        raise GraphError("backward() already called on this graph; rebuild it with a new forward pass")
    if loss.size != 1:
        raise GraphError(f"backward() needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached: no input requires a gradient")

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._consumed:
            raise GraphError(f"graph passes through a {node.op!r} node released by an earlier backward()")
        if node._backward is None:
            g = np.array(g, dtype=node.dtype)
            leaf_grads[node] = g
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    return leaf_grads
