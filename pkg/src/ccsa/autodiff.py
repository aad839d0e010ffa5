"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every primitive is a :class:`Function` subclass with a ``forward`` that
computes on raw arrays and a ``backward`` that maps the output adjoint to one
adjoint per tensor input. Applying a primitive records a node on the output
tensor, so the graph reachable from a root *is* the computation record;
:func:`backward` walks it once in reverse topological order.

Subgradient conventions (kept consistent across ops):

* ReLU / hinge: derivative at exactly 0 is 0.
* Max-pool: ties go to the first element of the window in row-major order.
* Euclidean norm at exactly 0: the unit vector ``1/sqrt(n)`` is used as the
  subgradient, so a collapsed pair still receives a push from a margin term.
* Clamped log: derivative is 0 where the input is below the clamp floor.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, op: str, shape_a, shape_b, detail: str = ""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """Immutable array value, optionally carrying the node that produced it."""

    __slots__ = ("data", "node", "name")

    def __init__(self, data, node: "Function | None" = None, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.node = node
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, data={np.array2string(self.data, precision=4)})"

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
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """A primitive: subclasses implement ``forward`` and ``backward``."""

    name = "function"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        return Tensor(out, node=fn)

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (_unbroadcast(grad * self.b, self.a.shape),
                _unbroadcast(grad * self.a, self.b.shape))


class Scale(Function):
    name = "scale"

    def forward(self, a, factor=1.0):
        self.factor = float(factor)
        return a * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(self.name, a.shape, b.shape, "expected (n,k) @ (k,m)")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Hinge(ReLU):
    """``max(0, x)`` used as the margin hinge; same subgradient rule as ReLU."""

    name = "hinge"


class Square(Function):
    name = "square"

    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2.0 * self.x * grad,)


class Sqrt(Function):
    name = "sqrt"

    def forward(self, x):
        if np.any(x < 0):
            raise ValueError("sqrt: negative input")
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad):
        # derivative at 0 taken as 0
        safe = np.where(self.out > 0, self.out, 1.0)
        return (np.where(self.out > 0, grad / (2.0 * safe), 0.0),)


class Log(Function):
    name = "log"

    def forward(self, x, floor=1e-12):
        self.active = x >= floor
        self.safe = np.maximum(x, floor)
        return np.log(self.safe)

    def backward(self, grad):
        return (np.where(self.active, grad / self.safe, 0.0),)


class Sum(Function):
    name = "sum"

    def forward(self, x, axis=None):
        self.shape, self.axis = x.shape, axis
        return np.sum(x, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x, axis=None):
        self.shape, self.axis = x.shape, axis
        self.count = x.size if axis is None else x.shape[axis]
        return np.mean(x, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape).copy(),)


class Softmax(Function):
    name = "softmax"

    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=None):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(self.name, x.shape, shape) from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Rows(Function):
    """Gather rows ``x[index]``; the adjoint scatter-adds repeated rows."""

    name = "rows"

    def forward(self, x, index=None):
        self.index = np.asarray(index, dtype=np.intp)
        self.shape = x.shape
        return x[self.index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(out, self.index, grad)
        return (out,)


class Pick(Function):
    """Per-row element ``x[i, index[i]]`` of a 2-D tensor."""

    name = "pick"

    def forward(self, x, index=None):
        self.index = np.asarray(index, dtype=np.intp)
        if x.ndim != 2 or self.index.shape != (x.shape[0],):
            raise ShapeError(self.name, x.shape, self.index.shape)
        self.shape = x.shape
        return x[np.arange(x.shape[0]), self.index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=DTYPE)
        out[np.arange(self.shape[0]), self.index] = grad
        return (out,)


class RowNorm(Function):
    """Euclidean norm over the last axis."""

    name = "norm"

    def forward(self, x):
        self.x = x
        self.out = np.sqrt(np.sum(x * x, axis=-1))
        return self.out

    def backward(self, grad):
        n = self.x.shape[-1]
        norm = self.out[..., None]
        direction = np.where(norm > 0, self.x / np.where(norm > 0, norm, 1.0), 1.0 / np.sqrt(n))
        return (grad[..., None] * direction,)


class Pad2d(Function):
    """Zero-pad the last two axes by ``pad`` on every side."""

    name = "pad2d"

    def forward(self, x, pad=0):
        self.pad = int(pad)
        if x.ndim < 2 or self.pad < 0:
            raise ShapeError(self.name, x.shape, (self.pad,))
        widths = [(0, 0)] * (x.ndim - 2) + [(self.pad, self.pad)] * 2
        return np.pad(x, widths)

    def backward(self, grad):
        p = self.pad
        if p == 0:
            return (grad,)
        return (grad[..., p:-p, p:-p],)


class Conv2d(Function):
    """Valid cross-correlation, stride 1.

    ``x``: (N, C_in, H, W); ``w``: (C_out, C_in, kh, kw) -> (N, C_out, H-kh+1, W-kw+1).
    """

    name = "conv2d"

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(self.name, x.shape, w.shape, "expected (N,C,H,W) and (O,C,kh,kw)")
        kh, kw = w.shape[2:]
        if x.shape[2] < kh or x.shape[3] < kw:
            raise ShapeError(self.name, x.shape, w.shape, "kernel larger than input")
        self.x, self.w = x, w
        # windows: (N, C, Ho, Wo, kh, kw)
        self.windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
        return np.einsum("nchwij,ocij->nohw", self.windows, w, optimize=True)

    def backward(self, grad):
        kh, kw = self.w.shape[2:]
        gw = np.einsum("nohw,nchwij->ocij", grad, self.windows, optimize=True)
        padded = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        flipped = self.w[:, :, ::-1, ::-1]
        gx = np.einsum("nohwij,ocij->nchw", gwin, flipped, optimize=True)
        return gx, gw


class MaxPool2d(Function):
    """2x2 max-pool, stride 2, over the last two axes; odd trailing rows/cols are dropped."""

    name = "maxpool2d"

    def forward(self, x):
        if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
            raise ShapeError(self.name, x.shape, (2, 2), "input smaller than window")
        self.in_shape = x.shape
        h, w = x.shape[-2] // 2, x.shape[-1] // 2
        lead = x.shape[:-2]
        crop = x[..., : 2 * h, : 2 * w]
        blocks = crop.reshape(*lead, h, 2, w, 2)
        blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h, w, 4)
        self.arg = np.argmax(blocks, axis=-1)  # first max wins
        return np.take_along_axis(blocks, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        lead = self.in_shape[:-2]
        h, w = grad.shape[-2:]
        blocks = np.zeros((*lead, h, w, 4), dtype=DTYPE)
        np.put_along_axis(blocks, self.arg[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(*lead, h, w, 2, 2)
        blocks = np.moveaxis(blocks, -2, -3).reshape(*lead, 2 * h, 2 * w)
        out = np.zeros(self.in_shape, dtype=DTYPE)
        out[..., : 2 * h, : 2 * w] = blocks
        return (out,)


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def scale(a, factor):
    return Scale.apply(a, factor=factor)


def matmul(a, b):
    return MatMul.apply(a, b)


def relu(x):
    return ReLU.apply(x)


def hinge(x):
    return Hinge.apply(x)


def square(x):
    return Square.apply(x)


def sqrt(x):
    return Sqrt.apply(x)


def log(x, floor=1e-12):
    return Log.apply(x, floor=floor)


def tsum(x, axis=None):
    return Sum.apply(x, axis=axis)


def mean(x, axis=None):
    return Mean.apply(x, axis=axis)


def softmax(x):
    return Softmax.apply(x)


def reshape(x, shape):
    return Reshape.apply(x, shape=tuple(shape))


def flatten(x):
    """Collapse all axes after the first."""
    return reshape(x, (x.shape[0], -1))


def rows(x, index):
    return Rows.apply(x, index=index)


def pick(x, index):
    return Pick.apply(x, index=index)


def norm(x):
    return RowNorm.apply(x)


def norm_diff(a, b):
    """Euclidean norm of ``a - b`` over the last axis."""
    if as_tensor(a).shape != as_tensor(b).shape:
        raise ShapeError("norm_diff", as_tensor(a).shape, as_tensor(b).shape)
    return norm(sub(a, b))


def pad2d(x, pad):
    return Pad2d.apply(x, pad=pad)


def conv2d(x, w):
    return Conv2d.apply(x, w)


def maxpool2d(x):
    return MaxPool2d.apply(x)


def topological_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root``, inputs before outputs; each appears once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in reversed(t.node.inputs):
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor, leaves) -> list[np.ndarray]:
    """Gradient of scalar ``root`` with respect to each tensor in ``leaves``.

    Leaves that do not influence ``root`` get zero arrays.
    """
    if root.data.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(topological_order(root)):
        g = grads.get(id(t))
        if g is None or t.node is None:
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    out = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        out.append(np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=DTYPE).reshape(leaf.shape))
    return out


def grad_check(function, inputs, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``function`` takes one Tensor per entry of ``inputs`` (arrays) and returns a
    scalar Tensor. Per coordinate the error is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    arrays = [np.array(x, dtype=DTYPE) for x in inputs]
    leaves = [Tensor(a) for a in arrays]
    analytic = backward(function(*leaves), leaves)
    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for i in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                probe = flat.copy()
                probe[i] += sign * epsilon
                args = [Tensor(a) for a in arrays]
                args[k] = Tensor(probe.reshape(base.shape))
                vals.append(function(*args).item())
            numeric = (vals[0] - vals[1]) / (2.0 * epsilon)
            a = analytic[k].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
