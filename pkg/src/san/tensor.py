"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation is a :class:`Function` subclass with a ``forward`` computed on
raw numpy arrays and a ``backward`` that maps the output gradient to one
gradient per input. ``Function.apply`` wraps the result in a :class:`Tensor`
that remembers the function (and therefore its inputs) so ``backward`` can
walk the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError, UsageError

DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional float64 array that can take part in a graph."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._ctx: Function | None = None
        self.name = name

    # -- metadata -----------------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        run_backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """A recorded operation: inputs, saved values and a backward rule."""

    __slots__ = ("parents", "saved")

    def __init__(self):
        self.parents: tuple[Tensor, ...] = ()
        self.saved: tuple = ()

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls()
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        track = grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=track)
        if track:
            fn.parents = tensors
            result._ctx = fn
        else:
            fn.saved = ()
        return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)
# ---------------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        self.saved = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        self.saved = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Div(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        ga = grad / b
        gb = -grad * a / (b * b)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------
class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out,)


class Log(Function):
    def forward(self, a):
        self.saved = (a,)
        return np.log(a)

    def backward(self, grad):
        (a,) = self.saved
        return (grad / a,)


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad / (2.0 * out),)


class Tanh(Function):
    def forward(self, a):
        out = np.tanh(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * (1.0 - out * out),)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp never overflows
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Sigmoid(Function):
    def forward(self, a):
        out = _sigmoid(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out * (1.0 - out),)


class Softplus(Function):
    """log(1 + exp(x)) in its overflow-free form max(x, 0) + log1p(exp(-|x|))."""

    def forward(self, a):
        self.saved = (a,)
        return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))

    def backward(self, grad):
        (a,) = self.saved
        return (grad * _sigmoid(a),)


class Relu(Function):
    def forward(self, a):
        mask = a > 0
        self.saved = (mask,)
        return np.where(mask, a, 0.0)

    def backward(self, grad):
        (mask,) = self.saved
        return (np.where(mask, grad, 0.0),)


class Clip(Function):
    def forward(self, a, lo=-np.inf, hi=np.inf):
        self.saved = ((a >= lo) & (a <= hi),)
        return np.clip(a, lo, hi)

    def backward(self, grad):
        (inside,) = self.saved
        return (np.where(inside, grad, 0.0),)


class PRelu(Function):
    """x for x >= 0, slope * x otherwise; one slope per entry of ``axis``."""

    def forward(self, x, slope, axis=0):
        shape = [1] * x.ndim
        shape[axis] = slope.size
        s = slope.reshape(shape)
        pos = x >= 0
        self.saved = (x, s, pos, slope.shape)
        return np.where(pos, x, s * x)

    def backward(self, grad):
        x, s, pos, slope_shape = self.saved
        gx = np.where(pos, grad, s * grad)
        gs = np.where(pos, 0.0, grad * x)
        gs = _unbroadcast(gs, s.shape).reshape(slope_shape)
        return gx, gs


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def softplus(a) -> Tensor:
    return Softplus.apply(a)


def relu(a) -> Tensor:
    return Relu.apply(a)


def clip(a, lo: float, hi: float) -> Tensor:
    return Clip.apply(a, lo=lo, hi=hi)


def prelu(x, slope, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    slope = as_tensor(slope)
    if slope.ndim != 1 or slope.size not in (1, x.shape[axis]):
        raise ShapeError(f"prelu slope shape {slope.shape} does not fit input {x.shape} on axis {axis}")
    return PRelu.apply(x, slope, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------
class MatMul(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a @ b

    def backward(self, grad):
        a, b = self.saved
        return grad @ b.T, a.T @ grad


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.saved = (a.shape, axis, keepdims)
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)


class ExactSum(Function):
    """Correctly rounded sum of every entry, independent of summation order."""

    def forward(self, a):
        self.saved = a.shape
        return np.array(math.fsum(a.ravel()))

    def backward(self, grad):
        return (np.full(self.saved, float(grad)),)


class Max(Function):
    """Maximum along one axis; ties send the gradient to the first maximum."""

    def forward(self, a, axis=-1, keepdims=False):
        idx = np.argmax(a, axis=axis)
        self.saved = (a.shape, axis, keepdims, idx)
        return np.max(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axis, keepdims, idx = self.saved
        if keepdims:
            grad = np.squeeze(grad, axis=axis)
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(grad, axis), axis=axis)
        return (out,)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def exact_sum(a) -> Tensor:
    return ExactSum.apply(a)


def mean_axis(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def tmax(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return Max.apply(a, axis=axis, keepdims=keepdims)


class Softmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)
        self.saved = (out, axis)
        return out

    def backward(self, grad):
        out, axis = self.saved
        inner = np.sum(grad * out, axis=axis, keepdims=True)
        return (out * (grad - inner),)


def softmax(a, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------
class Reshape(Function):
    def forward(self, a, shape=()):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, grad):
        (shape,) = self.saved
        return (grad.reshape(shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.saved = (axes,)
        return np.transpose(a, axes)

    def backward(self, grad):
        (axes,) = self.saved
        if axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(axes)),)


class GetItem(Function):
    def forward(self, a, index=None):
        self.saved = (a.shape, index)
        return np.array(a[index], dtype=DTYPE)

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape)
        np.add.at(out, index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.saved = ([a.shape[axis] for a in arrays], axis)
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        sizes, axis = self.saved
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=axis))


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.saved = (axis, len(arrays))
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        axis, n = self.saved
        return tuple(np.take(grad, i, axis=axis) for i in range(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        np.empty(a.shape).reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    return Reshape.apply(a, shape=shape)


def transpose(a, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a, index) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of an empty list")
    return Stack.apply(*tensors, axis=axis)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------
def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if stride < 1 or span < 0 or span % stride:
        raise ConfigurationError(
            f"conv2d output size is not integral: size={size}, kernel={k}, stride={stride}, padding={padding}"
        )
    return span // stride + 1


class Conv2d(Function):
    """Cross-correlation over N x C x H x W with K x C x kh x kw kernels.

    The forward pass accumulates the C*kh*kw products one term at a time, in
    (c, i, j) order, so it matches a naive nested loop bit for bit.
    """

    def forward(self, x, w, b=None, stride=1, padding=0):
        n, c, h, wd = x.shape
        k, _, kh, kw = w.shape
        oh = _conv_out(h, kh, stride, padding)
        ow = _conv_out(wd, kw, stride, padding)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        out = np.zeros((n, k, oh, ow))
        term = np.empty_like(out)
        hs, ws = stride * (oh - 1) + 1, stride * (ow - 1) + 1
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, ci, i:i + hs:stride, j:j + ws:stride]
                    np.multiply(w[:, ci, i, j][None, :, None, None], patch[:, None, :, :], out=term)
                    out += term
        if b is not None:
            out += b[None, :, None, None]
        self.saved = (xp, w, stride, padding, x.shape, b is not None)
        return out

    def backward(self, grad):
        xp, w, stride, padding, xshape, has_bias = self.saved
        k, c, kh, kw = w.shape
        oh, ow = grad.shape[2:]
        hs, ws = stride * (oh - 1) + 1, stride * (ow - 1) + 1
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + hs:stride, j:j + ws:stride]  # n c oh ow
                gw[:, :, i, j] = np.tensordot(grad, patch, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, i:i + hs:stride, j:j + ws:stride] += np.tensordot(
                    grad, w[:, :, i, j], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
        if padding:
            gx = gxp[:, :, padding:padding + xshape[2], padding:padding + xshape[3]]
        else:
            gx = gxp
        grads = [np.ascontiguousarray(gx), gw]
        if has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is C x H x W or N x C x H x W; ``kernels`` is K x C x kh x kw.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects C x H x W input and 4-d kernels, got {x.shape} and {kernels.shape}")
    if x.shape[-3] != kernels.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    kh, kw = kernels.shape[2:]
    if kh > x.shape[-2] + 2 * padding or kw > x.shape[-1] + 2 * padding:
        raise ConfigurationError(f"kernel {kh}x{kw} larger than padded input {x.shape}")
    xin = x if batched else reshape(x, (1,) + x.shape)
    args = (xin, kernels) if bias is None else (xin, kernels, as_tensor(bias))
    out = Conv2d.apply(*args, stride=stride, padding=padding)
    return out if batched else reshape(out, out.shape[1:])


class AvgPool2d(Function):
    """Block means over the last two axes, summed term by term in row-major order."""

    def forward(self, x, sh=1, sw=1):
        *lead, h, w = x.shape
        blocks = x.reshape(*lead, h // sh, sh, w // sw, sw)
        acc = np.zeros((*lead, h // sh, w // sw))
        for i in range(sh):
            for j in range(sw):
                acc += blocks[..., :, i, :, j]
        self.saved = (sh, sw)
        return acc / (sh * sw)

    def backward(self, grad):
        sh, sw = self.saved
        g = grad / (sh * sw)
        return (np.repeat(np.repeat(g, sh, axis=-2), sw, axis=-1),)


def avg_pool2d(x, stride_h: int, stride_w: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"avg_pool2d needs at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    if stride_h < 1 or stride_w < 1 or h % stride_h or w % stride_w:
        raise ConfigurationError(f"pool strides ({stride_h},{stride_w}) do not divide map {h}x{w}")
    return AvgPool2d.apply(x, sh=stride_h, sw=stride_w)


class Upsample(Function):
    def forward(self, x, fh=1, fw=1):
        self.saved = (fh, fw)
        return np.repeat(np.repeat(x, fh, axis=-2), fw, axis=-1)

    def backward(self, grad):
        fh, fw = self.saved
        *lead, h, w = grad.shape
        return (grad.reshape(*lead, h // fh, fh, w // fw, fw).sum(axis=(-3, -1)),)


def upsample_nearest(x, factor_h: int, factor_w: int | None = None) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by integer factors."""
    factor_w = factor_h if factor_w is None else factor_w
    if factor_h < 1 or factor_w < 1:
        raise ConfigurationError(f"upsample factors must be positive, got ({factor_h},{factor_w})")
    return Upsample.apply(x, fh=factor_h, fw=factor_w)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------
def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
    return order


def run_backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


GradientMap = dict


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> GradientMap:
    """Exact gradients of ``loss`` for each named parameter.

    Parameters not reachable from ``loss`` get an all-zero gradient.
    """
    for p in params.values():
        p.grad = None
    run_backward(loss)
    out = {}
    for name, p in params.items():
        out[name] = np.zeros(p.shape) if p.grad is None else p.grad
        p.grad = None
    return out


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------
# Central differences at h=1e-5 carry roundoff near eps*|f|/h ~ 1e-11, so
# entries far below this floor are compared on an absolute scale instead.
GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``param``."""
    if step <= 0:
        raise UsageError("finite-difference step must be positive")
    flat = param.data.reshape(-1)
    out = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(param.shape)


def gradcheck(
    f: Callable[[], Tensor],
    point: Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-5,
    report: dict | None = None,
) -> float:
    """Max coordinate-wise relative error between backward() and central differences.

    ``f`` is re-evaluated with the entries of ``point`` perturbed in place.
    When ``report`` is given it receives the worst error per parameter name.
    """
    if not isinstance(point, Mapping):
        point = {f"p{i}": t for i, t in enumerate(point)}
    for t in point.values():
        t.requires_grad = True
    analytic = backward(f(), point)
    worst = 0.0
    for name, t in point.items():
        num = numeric_gradient(f, t, step)
        err = float(relative_error(analytic[name], num).max()) if t.size else 0.0
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    return worst
