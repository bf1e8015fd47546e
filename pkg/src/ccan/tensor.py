"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation used by the network lives here. A forward op
records its parents and a closure mapping the output gradient to parent
gradients; :func:`backward` walks the recorded graph in reverse topological
order and accumulates into the ``grad`` of leaf tensors that require it.

Convolutions follow the cross-correlation convention (no kernel flip).
Gradients accumulate across ``backward`` calls until explicitly zeroed.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError, UsageError

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run forward ops without recording a graph (thread-local)."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op: Optional[str] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def __repr__(self):
        extra = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{extra})"

    # -- operator sugar ---------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

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

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Trainable leaf tensor; its gradient buffer starts at zero."""

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


# ---------------------------------------------------------------------------
# graph plumbing


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    out._op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar ``loss`` into every reachable leaf.

    Leaf gradients accumulate: calling twice without zeroing doubles them.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward() needs a scalar loss tensor")
    if not loss.requires_grad:
        return

    order: list = []
    seen = set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return _result(
        a.data + b.data, (a, b), "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return _result(
        a.data - b.data, (a, b), "sub",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return _result(
        a.data * b.data, (a, b), "mul",
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data
    return _result(
        out, (a, b), "div",
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return _result(
        a.data ** exponent, (a,), "pow",
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), "log", lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(
        np.transpose(a.data, axes), (a,), "transpose",
        lambda g: (np.transpose(g, inverse),),
    )


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ConfigError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), "matmul", grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    return mul(a, factor)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(
        out, (logits,), "softmax",
        lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
    )


def mse(a: Tensor, b) -> Tensor:
    """Mean over the leading (batch) axis of the squared Frobenius distance."""
    b = _lift(b, a)
    if a.shape != b.shape:
        raise ConfigError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = a.shape[0] if a.ndim else 1
    out = np.asarray(np.sum(diff * diff) / n, dtype=a.dtype)
    return _result(
        out, (a, b), "mse",
        lambda g: (g * (2.0 / n) * diff, g * (-2.0 / n) * diff),
    )


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def grad_fn(g):
        return (np.expand_dims(g, axis) * a.data / safe * (n > 0),)

    return _result(np.squeeze(n, axis=axis), (a,), "norm", grad_fn)


def squash(s: Tensor, axis: int = -1, variant: str = "standard") -> Tensor:
    """Capsule nonlinearity ``v = h(|s|) s``.

    ``standard``: h(n) = n / (1 + n^2), so |v| = n^2 / (1 + n^2) < 1. Near
    |v| = 1 the factor is clamped a few ulps below 1 so the strict bound
    survives rounding.
    ``printed``: h(n) = n^2 / (1 + n)^2, i.e. |v| = n^3 / (1 + n)^2 (unbounded).
    """
    x = s.data
    n2 = np.sum(x * x, axis=axis, keepdims=True)
    n = np.sqrt(n2)
    safe = np.where(n > 0, n, 1.0)
    if variant == "standard":
        eps = np.finfo(x.dtype).eps
        length = np.where(n2 < 1.0, n2 / (1.0 + n2), 1.0 - 1.0 / (1.0 + n2))
        length = np.minimum(length, 1.0 - 4 * eps)
        h = np.where(n > 0, length / safe, 0.0)
        # h'(n)/n, zero at the origin (the s s^T term vanishes there)
        dh_over_n = np.where(n > 0, (1.0 - n2) / ((1.0 + n2) ** 2 * safe), 0.0)
    elif variant == "printed":
        h = n2 / (1.0 + n) ** 2
        dh_over_n = 2.0 / (1.0 + n) ** 3
    else:
        raise ConfigError(f"unknown squash variant {variant!r}")
    h = h.astype(x.dtype, copy=False)
    dh_over_n = dh_over_n.astype(x.dtype, copy=False)

    def grad_fn(g):
        return (h * g + dh_over_n * x * np.sum(g * x, axis=axis, keepdims=True),)

    return _result(h * x, (s,), "squash", grad_fn)


# ---------------------------------------------------------------------------
# convolutions


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check_conv_operands(x: Tensor, kernel: Tensor, in_axis: int, op: str):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ConfigError(f"{op}: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[in_axis]:
        raise ConfigError(
            f"{op}: input has {x.shape[1]} channels but kernel {kernel.shape} expects "
            f"{kernel.shape[in_axis]}"
        )


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x`` (N, C, H, W) with ``kernel`` (F, C, kh, kw)."""
    _check_conv_operands(x, kernel, 1, "conv2d")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ConfigError(f"conv2d: invalid stride {stride} / padding {padding}")
    n, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ConfigError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}"
        )
    oh, ow = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    cols = kernels.im2col(x.data, kh, kw, sh, sw, ph, pw, oh, ow)
    kmat = kernel.data.reshape(f, -1)
    out = (cols @ kmat.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def grad_fn(g):
        # upstream gradients may be broadcast views; BLAS wants a dense operand
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(-1, f), dtype=cols.dtype)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(g2 @ kmat, n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow)
        return gx, gk

    return _result(np.ascontiguousarray(out), (x, kernel), "conv2d", grad_fn)


def conv2d_transpose(y: Tensor, kernel: Tensor, stride=1, padding=0, output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d` for a kernel of shape (F, C, kh, kw).

    Maps (N, F, H', W') to (N, C, H, W) with
    H = (H' - 1) * sh - 2 * ph + kh + output_padding.
    """
    _check_conv_operands(y, kernel, 0, "conv2d_transpose")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ConfigError(f"conv2d_transpose: invalid stride {stride} / padding {padding}")
    if not (0 <= oph < sh and 0 <= opw < sw):
        raise ConfigError(f"conv2d_transpose: output_padding {output_padding} must be < stride")
    n, f, hy, wy = y.shape
    _, c, kh, kw = kernel.shape
    h = (hy - 1) * sh - 2 * ph + kh + oph
    w = (wy - 1) * sw - 2 * pw + kw + opw
    if h < 1 or w < 1:
        raise ConfigError(f"conv2d_transpose: non-positive output extent {h}x{w}")
    kmat = kernel.data.reshape(f, -1)
    y2 = y.data.transpose(0, 2, 3, 1).reshape(-1, f)
    out = kernels.col2im(y2 @ kmat, n, c, h, w, kh, kw, sh, sw, ph, pw, hy, wy)

    def grad_fn(g):
        cols = kernels.im2col(g, kh, kw, sh, sw, ph, pw, hy, wy)
        gy = None
        if y.requires_grad:
            gy = np.ascontiguousarray((cols @ kmat.T).reshape(n, hy, wy, f).transpose(0, 3, 1, 2))
        gk = (y2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        return gy, gk

    return _result(out, (y, kernel), "conv2d_transpose", grad_fn)


# ---------------------------------------------------------------------------
# fixed linear resampling


def adaptive_pool_matrix(size_in: int, size_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (size_out, size_in) averaging matrix for adaptive pooling."""
    m = np.zeros((size_out, size_in), dtype=dtype)
    for i in range(size_out):
        start = (i * size_in) // size_out
        end = -((-(i + 1) * size_in) // size_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def bilinear_matrix(size_in: int, size_out: int, dtype=np.float64) -> np.ndarray:
    """(size_out, size_in) linear interpolation matrix, half-pixel centres."""
    m = np.zeros((size_out, size_in), dtype=dtype)
    scale_ = size_in / size_out
    for i in range(size_out):
        src = min(max((i + 0.5) * scale_ - 0.5, 0.0), size_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, size_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resample2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply ``rows @ x @ cols.T`` over the last two axes of ``x``."""
    rows_t = Tensor(rows.astype(x.dtype, copy=False))
    cols_t = Tensor(cols.T.astype(x.dtype, copy=False))
    return matmul(matmul(rows_t, x), cols_t)
