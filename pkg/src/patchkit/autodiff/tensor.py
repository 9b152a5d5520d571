"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array and, when it participates in a recorded
computation, remembers its parents and a backward rule. Calling
``backward`` on a scalar loss walks the graph in reverse topological
order and accumulates exact gradients into every reachable tensor with
``requires_grad`` set.

Convolutions are lowered to GEMMs via strided window views, which keeps
CPU training of the small 1-D networks in this package fast enough.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "conv1d",
    "conv_transpose1d",
    "exp",
    "gelu",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "narrow",
    "relu",
    "reshape",
    "sqrt",
    "sum_",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Dense float64 array plus optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, severed from the graph; no gradient flows through."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:  # pragma: no cover
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; every operator routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Every tensor with ``requires_grad`` that participated in producing
    ``loss`` receives its exact gradient (accumulated); tensors that did
    not participate are left untouched.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
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
        for parent in node._parents:
            stack.append((parent, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def pow_(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(out_data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                part.accumulate_grad(g[tuple(idx)])

    return _make(out_data, parts, bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate_grad(full)

    return _make(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _make(out_data, (a,), bwd)


def leaky_relu(a, negative_slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    out_data = np.where(a.data > 0.0, a.data, negative_slope * a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.where(a.data > 0.0, 1.0, negative_slope))

    return _make(out_data, (a,), bwd)


def gelu(a) -> Tensor:
    """Exact Gaussian error linear unit, x * Phi(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
            a.accumulate_grad(g * (cdf + a.data * pdf))

    return _make(out_data, (a,), bwd)


# -- GEMM-backed 1-D convolution kernels (plain numpy, used by the ops below)


def _window_view(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(B, C, L) -> read-only view (B, C, L_out, K) of sliding windows."""
    b, c, length = x.shape
    l_out = (length - kernel) // stride + 1
    sb, sc, sl = x.strides
    return as_strided(
        x,
        shape=(b, c, l_out, kernel),
        strides=(sb, sc, stride * sl, sl),
        writeable=False,
    )


def _pad_last(x: np.ndarray, left: int, right: int) -> np.ndarray:
    if left == 0 and right == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (left, right)))


def _corr1d(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation: (B, C, L) x (O, C, K) -> (B, O, L_out)."""
    xp = _pad_last(x, padding, padding)
    win = _window_view(xp, w.shape[2], stride)
    out = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # (B, L_out, O)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def _corr1d_dw(x: np.ndarray, gy: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Weight gradient of _corr1d: returns (O, C, K)."""
    xp = _pad_last(x, padding, padding)
    win = _window_view(xp, kernel, stride)[:, :, : gy.shape[2], :]
    return np.tensordot(gy, win, axes=([0, 2], [0, 2]))  # (O, C, K)


def _dilate(y: np.ndarray, stride: int, extra_right: int = 0) -> np.ndarray:
    """Insert stride-1 zeros between samples along the last axis."""
    if stride == 1 and extra_right == 0:
        return y
    b, c, length = y.shape
    out = np.zeros((b, c, stride * (length - 1) + 1 + extra_right), dtype=y.dtype)
    out[:, :, : stride * (length - 1) + 1 : stride] = y
    return out


def conv1d_out_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv_transpose1d_out_length(
    length: int, kernel: int, stride: int, padding: int, output_padding: int
) -> int:
    return (length - 1) * stride + kernel - 2 * padding + output_padding


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, stride: int, padding: int) -> Tensor:
    """x (B, C_in, L) with w (C_out, C_in, K) -> (B, C_out, L_out)."""
    x, w = as_tensor(x), as_tensor(w)
    kernel = w.data.shape[2]
    if padding > kernel - 1:
        raise ValueError("padding must not exceed kernel-1")
    out_data = _corr1d(x.data, w.data, stride, padding)
    if b is not None:
        out_data += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))
        if w.requires_grad:
            w.accumulate_grad(_corr1d_dw(x.data, g, kernel, stride, padding))
        if x.requires_grad:
            g_dil = _dilate(g, stride)
            w_flip = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
            dx = _corr1d(g_dil, w_flip, 1, kernel - 1 - padding)
            length = x.data.shape[2]
            if dx.shape[2] < length:  # trailing inputs never covered by a window
                dx = _pad_last(dx, 0, length - dx.shape[2])
            x.accumulate_grad(dx)

    return _make(out_data, parents, bwd)


def conv_transpose1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None,
    stride: int,
    padding: int,
    output_padding: int = 0,
) -> Tensor:
    """x (B, C_in, L) with w (C_in, C_out, K) -> (B, C_out, L_out)."""
    x, w = as_tensor(x), as_tensor(w)
    kernel = w.data.shape[2]
    if padding > kernel - 1:
        raise ValueError("padding must not exceed kernel-1")
    if output_padding >= stride:
        raise ValueError("output_padding must be smaller than stride")
    x_dil = _dilate(x.data, stride, output_padding)
    w_flip = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
    out_data = _corr1d(x_dil, w_flip, 1, kernel - 1 - padding)
    if b is not None:
        out_data += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))
        if w.requires_grad:
            w.accumulate_grad(_corr1d_dw(g, x.data, kernel, stride, padding))
        if x.requires_grad:
            x.accumulate_grad(_corr1d(g, np.ascontiguousarray(w.data), stride, padding))

    return _make(out_data, parents, bwd)
