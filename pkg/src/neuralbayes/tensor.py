"""Dense float64 tensors with reverse-mode differentiation.

A dynamic tape: every operation returns a new ``Tensor`` that remembers its
parents and how to push gradients back to them.  ``stop_gradient`` yields a
node whose forward value is bitwise identical to its input but which
contributes exactly zero to every parent during backpropagation.

Conventions:
  * everything is float64; user-supplied values must be finite,
  * op outputs are never mutated (optimizers swap leaf ``.data`` buffers
    between tapes instead of writing into them),
  * log guards are always supplied by the caller (``log(x + eps)``), never
    added implicitly,
  * backward closures only reference parent nodes (the output's gradient is
    passed in), so a dropped tape is reference-count-freed immediately.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ShapeError

Axis = int | tuple[int, ...] | None

BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """A node of the evaluation record: numpy payload plus tape bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor values must be finite (got NaN or Inf)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn = _noop
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._backward = _noop
        out.op = op
        return out

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
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # arithmetic sugar; the functions below do the real work
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

    def backward(self) -> None:
        """Backpropagate from this scalar through the tape.

        Gradients of every visited node are reset first, so repeated calls on
        the same record are deterministic and bitwise equal.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is not None:
                node._backward(node.grad)


def _noop(_g: np.ndarray) -> None:
    return None


def _toposort(root: Tensor) -> list[Tensor]:
    """Deterministic postorder over the requires-grad subgraph (parents first)."""
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
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over broadcast axes so it matches the parent shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_binary(a, b, op: str, fwd) -> tuple[Tensor, Tensor, Tensor]:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return a, b, Tensor._from_op(data, (a, b), op)


def add(a, b) -> Tensor:
    a, b, out = _broadcast_binary(a, b, "add", np.add)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b, out = _broadcast_binary(a, b, "sub", np.subtract)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b, out = _broadcast_binary(a, b, "mul", np.multiply)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def div(a, b) -> Tensor:
    a, b, out = _broadcast_binary(a, b, "div", np.divide)

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    out._backward = backward
    return out


def neg(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._from_op(-x.data, (x,), "neg")

    def backward(g):
        _accum(x, -g)

    out._backward = backward
    return out


def log(x) -> Tensor:
    """Natural log. The input must be strictly positive; guards are the caller's job."""
    x = _as_tensor(x)
    if x.data.size and np.min(x.data) <= 0.0:
        raise DomainError("log requires strictly positive inputs; add a guard constant")
    out = Tensor._from_op(np.log(x.data), (x,), "log")

    def backward(g):
        _accum(x, g / x.data)

    out._backward = backward
    return out


def exp(x) -> Tensor:
    x = _as_tensor(x)
    res = np.exp(x.data)
    out = Tensor._from_op(res, (x,), "exp")

    def backward(g):
        _accum(x, g * res)

    out._backward = backward
    return out


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.size and np.min(x.data) <= 0.0:
        raise DomainError("sqrt requires strictly positive inputs")
    res = np.sqrt(x.data)
    out = Tensor._from_op(res, (x,), "sqrt")

    def backward(g):
        _accum(x, g * 0.5 / res)

    out._backward = backward
    return out


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._from_op(np.maximum(x.data, 0.0), (x,), "relu")

    def backward(g):
        _accum(x, g * (x.data > 0.0))

    out._backward = backward
    return out


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    res = np.tanh(x.data)
    out = Tensor._from_op(res, (x,), "tanh")

    def backward(g):
        _accum(x, g * (1.0 - res * res))

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = backward
    return out


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {x.shape}")
    out = Tensor._from_op(x.data.T.copy(), (x,), "transpose")

    def backward(g):
        _accum(x, g.T)

    out._backward = backward
    return out


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._from_op(x.data.reshape(shape), (x,), "reshape")

    def backward(g):
        _accum(x, g.reshape(x.shape))

    out._backward = backward
    return out


def _norm_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis: Axis = None) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = Tensor._from_op(x.data.sum(axis=axes), (x,), "sum")

    def backward(g):
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    out._backward = backward
    return out


def tmean(x, axis: Axis = None) -> Tensor:
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ShapeError("mean of an empty tensor")
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = Tensor._from_op(x.data.mean(axis=axes), (x,), "mean")

    def backward(g):
        g = g / count
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    out._backward = backward
    return out


def mean_rows(x) -> Tensor:
    """Mean over the batch (leading) axis: (B, K) -> (K,)."""
    x = _as_tensor(x)
    if x.shape[0] < 1:
        raise ShapeError("mean_rows needs at least one row")
    return tmean(x, axis=0)


def mean_all(x) -> Tensor:
    """Mean over every element, as a scalar tensor."""
    return tmean(x, axis=None)


def softmax(x, axis: int = 1) -> Tensor:
    """Row-stochastic softmax along ``axis``, computed with max subtraction."""
    x = _as_tensor(x)
    ax = axis % x.ndim
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)
    out = Tensor._from_op(s, (x,), "softmax")

    def backward(g):
        dot = (g * s).sum(axis=ax, keepdims=True)
        _accum(x, s * (g - dot))

    out._backward = backward
    return out


def softmax_rows(x) -> Tensor:
    """Softmax over each row of a (B, K) matrix."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a (B, K) tensor, got shape {x.shape}")
    return softmax(x, axis=1)


def column(x, k: int) -> Tensor:
    """Extract column ``k`` of a (B, K) tensor as a (B,) tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"column expects a 2-D tensor, got shape {x.shape}")
    out = Tensor._from_op(x.data[:, k].copy(), (x,), "column")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, k] = g
        _accum(x, gx)

    out._backward = backward
    return out


def element(x, k: int) -> Tensor:
    """Extract element ``k`` of a 1-D tensor as a scalar tensor."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"element expects a 1-D tensor, got shape {x.shape}")
    out = Tensor._from_op(np.asarray(x.data[k]), (x,), "element")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[k] = g
        _accum(x, gx)

    out._backward = backward
    return out


def _pool_geometry(height: int, width: int, kernel: int, stride: int) -> tuple[int, int, int, int]:
    kh, kw = min(kernel, height), min(kernel, width)
    return kh, kw, (height - kh) // stride + 1, (width - kw) // stride + 1


def avg_pool2d(x, kernel: int = 2, stride: int = 2) -> Tensor:
    """Spatial mean over kernel windows of a (B, C, H, W) tensor.

    When H (or W) is smaller than the kernel, the kernel shrinks to H (or W),
    so pooling a 1x1 map is the identity and any map can be pooled to 1x1 by
    passing ``kernel=max(H, W)``.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects (B, C, H, W), got shape {x.shape}")
    B, C, H, W = x.shape
    kh, kw, oh, ow = _pool_geometry(H, W, kernel, stride)
    out_data = np.empty((B, C, oh, ow))
    for i in range(oh):
        for j in range(ow):
            win = x.data[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out_data[:, :, i, j] = win.mean(axis=(2, 3))
    out = Tensor._from_op(out_data, (x,), "avg_pool2d")

    def backward(g):
        gx = np.zeros((B, C, H, W))
        scale = 1.0 / (kh * kw)
        for i in range(oh):
            for j in range(ow):
                gx[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw] += (
                    g[:, :, i, j][:, :, None, None] * scale
                )
        _accum(x, gx)

    out._backward = backward
    return out


def max_pool2d(x, kernel: int = 2, stride: int = 2) -> Tensor:
    """Spatial max over kernel windows; gradient routes to the first maximum."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects (B, C, H, W), got shape {x.shape}")
    B, C, H, W = x.shape
    kh, kw, oh, ow = _pool_geometry(H, W, kernel, stride)
    out_data = np.empty((B, C, oh, ow))
    argmax = np.empty((B, C, oh, ow), dtype=np.intp)
    for i in range(oh):
        for j in range(ow):
            win = x.data[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            flat = win.reshape(B, C, kh * kw)
            idx = flat.argmax(axis=2)
            out_data[:, :, i, j] = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
            argmax[:, :, i, j] = idx
    out = Tensor._from_op(out_data, (x,), "max_pool2d")

    def backward(g):
        gx = np.zeros((B, C, H, W))
        bb, cc = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        for i in range(oh):
            for j in range(ow):
                di, dj = np.divmod(argmax[:, :, i, j], kw)
                np.add.at(gx, (bb, cc, i * stride + di, j * stride + dj), g[:, :, i, j])
        _accum(x, gx)

    out._backward = backward
    return out


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (B, Cin, H, W) with (Cout, Cin, k, k) kernels."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernels, got {x.shape}, {weight.shape}")
    B, Cin, H, W = x.shape
    Cout, Cw, kh, kw = weight.shape
    if Cw != Cin:
        raise ShapeError(f"conv2d channel mismatch: input has {Cin}, kernels expect {Cw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    oh = (Hp - kh) // stride + 1
    ow = (Wp - kw) // stride + 1
    out_data = np.zeros((B, Cout, oh, ow))
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride]
            out_data += np.einsum("bchw,oc->bohw", patch, weight.data[:, :, di, dj], optimize=True)
    bias_t = None if bias is None else _as_tensor(bias)
    parents = (x, weight) if bias_t is None else (x, weight, bias_t)
    if bias_t is not None:
        out_data += bias_t.data[None, :, None, None]
    out = Tensor._from_op(out_data, parents, "conv2d")
    wdata = weight.data

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wdata)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride]
                gw[:, :, di, dj] = np.einsum("bohw,bchw->oc", g, patch, optimize=True)
                gxp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride] += np.einsum(
                    "bohw,oc->bchw", g, wdata[:, :, di, dj], optimize=True
                )
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        _accum(x, gx)
        _accum(weight, gw)
        if bias_t is not None:
            _accum(bias_t, g.sum(axis=(0, 2, 3)))

    out._backward = backward
    return out


def stop_gradient(x) -> Tensor:
    """Forward identity whose backward contribution is exactly zero.

    The returned node shares the input's buffer, so the forward value is
    bitwise identical; it has no parents on the tape, so nothing flows back.
    """
    x = _as_tensor(x)
    return Tensor._from_op(x.data, (), "stop_gradient")


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Backpropagate and return one gradient array per named parameter.

    Parameters unreachable from the loss get zero gradients of matching shape.
    """
    if loss.data.size != 1:
        raise ShapeError(f"gradients() requires a scalar loss, got shape {loss.shape}")
    loss.backward()
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out
