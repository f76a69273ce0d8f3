"""Reverse-mode automatic differentiation over flat numpy storage.

A :class:`Tensor` wraps a C-contiguous float array (float32 by default,
float64 for high-precision oracle runs). Operations executed inside a
``with tape() as g:`` block append nodes to the tape in execution order;
:func:`backward` replays the tape in reverse, accumulating gradients by
summation into ``Tensor.grad``. Outside a tape, the same operations run as
plain numpy forwards, which is how evaluation mode works.

Broadcasting is deliberately narrow: a binary op accepts two operands only
when one side's shape broadcasts into the other's (bias-style trailing
alignment or scalars). Anything wider raises ShapeError.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


def _c_contiguous(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    if arr.ndim == 0 or arr.flags["C_CONTIGUOUS"]:
        return arr
    return np.ascontiguousarray(arr)


class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep = isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep:
            arr = arr.astype(np.float32)
        self.data = _c_contiguous(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars adopt this tensor's dtype
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Node:
    """One recorded operation: inputs, output, and its vector-Jacobian rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], out: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.out = out
        self.backward_fn = backward_fn


class Graph:
    """Tape of nodes; insertion order is a valid topological order."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def add(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE_GRAPHS: list[Graph] = []


class tape:
    """Context manager that makes operations record onto a fresh Graph."""

    __slots__ = ("graph",)

    def __enter__(self) -> Graph:
        self.graph = Graph()
        _ACTIVE_GRAPHS.append(self.graph)
        return self.graph

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_GRAPHS.pop()
        assert popped is self.graph


def _active_graph() -> Optional[Graph]:
    return _ACTIVE_GRAPHS[-1] if _ACTIVE_GRAPHS else None


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    graph = _active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = _c_contiguous(np.asarray(out_data))
    out.grad = None
    out.requires_grad = track
    if track:
        graph.add(Node(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every tensor on the path."""
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    graph = graph if graph is not None else _active_graph()
    if graph is None:
        raise ContractError("backward called without a recorded graph")
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(graph.nodes):
        g = node.out.grad
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            # accumulation always allocates, so sharing views here is safe
            inp.grad = gi if inp.grad is None else inp.grad + gi


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not align") from None
    if shape != a.shape and shape != b.shape:
        raise ShapeError(f"{op}: mutual broadcast of {a.shape} and {b.shape} is not supported")
    return shape


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def back(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record("add", (a, b), out, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def back(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record("sub", (a, b), out, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def back(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _record("mul", (a, b), out, back)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "div")
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data

    def back(g):
        inv = g / bd
        return _reduce_to(inv, a.shape), _reduce_to(-inv * ad / bd, b.shape)

    return _record("div", (a, b), out, back)


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def abs_(a: Tensor) -> Tensor:
    """|a| with subgradient 0 at 0 (numpy sign(0) == 0)."""
    sign = np.sign(a.data)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    in_shape = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(in_shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _record("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inverse),))


def _normalize_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim if -ndim <= a < ndim else _axis_error(a, ndim) for a in axis)
    return axes


def _axis_error(axis, ndim):
    raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, in_shape),)

    return _record("sum", (a,), out, back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes], dtype=np.int64))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, in_shape) / np.asarray(count, dtype=g.dtype),)

    return _record("mean", (a,), out, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2-d x 2-d, batched x 2-d, or batched x batched.

    Batched operands must carry identical leading dimensions; gradient
    w.r.t. a is g.b^T and w.r.t. b is a^T.g (summed over batch when b is 2-d).
    """
    _check_same_dtype(a, b, "matmul")
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions disagree for {a.shape} and {b.shape}")
    if ad.ndim == 2 and bd.ndim > 2:
        raise ShapeError(f"matmul: 2-d by batched ({a.shape} x {b.shape}) is not supported")
    out = ad @ bd
    k = ad.shape[-1]
    n = bd.shape[-1]

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record("matmul", (a, b), out, back)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-d cross-correlation over NCHW input with [O, C/groups, kh, kw] weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    _check_same_dtype(x, weight, "conv2d")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ContractError(f"conv2d: invalid stride={stride} padding={padding} groups={groups}")
    if C % groups != 0:
        raise ShapeError(f"conv2d: {C} input channels not divisible by {groups} groups")
    if O % groups != 0:
        raise ShapeError(f"conv2d: {O} output channels not divisible by {groups} groups")
    if Cg != C // groups:
        raise ShapeError(
            f"conv2d: weight shape {weight.shape} expects {Cg * groups} input channels, input has {C}"
        )
    for name, extent, kext in (("height", H, kh), ("width", W, kw)):
        span = extent + 2 * padding - kext
        if span < 0 or span % stride != 0:
            raise ShapeError(
                f"conv2d: non-integral output {name} for input {x.shape}, kernel {weight.shape}, "
                f"stride {stride}, padding {padding}"
            )
    if bias is not None:
        _check_same_dtype(x, bias, "conv2d")
        if bias.ndim != 1 or bias.shape[0] != O:
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {O} output channels")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    out = kernels.conv2d_forward(xp, weight.data, stride, groups)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    Hp, Wp = xp.shape[2], xp.shape[3]
    wd = weight.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g = np.ascontiguousarray(g)
        gxp = kernels.conv2d_grad_input(g, wd, stride, groups, Hp, Wp)
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        gw = kernels.conv2d_grad_kernel(xp, g, stride, groups, kh, kw)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record("conv2d", inputs, out, back)


def layer_norm(
    x: Tensor, normalized_size: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Standardize each slice along the last axis, then apply gamma/beta."""
    if x.shape[-1] != normalized_size or gamma.size != normalized_size or beta.size != normalized_size:
        raise ShapeError(
            f"layer_norm: last axis of {x.shape} must equal normalized_size {normalized_size} "
            f"(gamma {gamma.shape}, beta {beta.shape})"
        )
    if eps < 0:
        raise ContractError(f"layer_norm: eps must be >= 0, got {eps}")
    _check_same_dtype(x, gamma, "layer_norm")
    _check_same_dtype(x, beta, "layer_norm")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data
    reduce_axes = tuple(range(xd.ndim - 1))

    def back(g):
        gxhat = g * gd
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        return gx, ggamma, gbeta

    return _record("layer_norm", (x, gamma, beta), out, back)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU x * Phi(x) using the erf form."""
    xd = x.data
    out, phi = kernels.gelu_forward(xd)

    def back(g):
        return (kernels.gelu_backward(xd, phi, g),)

    return _record("gelu", (x,), out, back)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along one axis."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record("softmax", (x,), out, back)
