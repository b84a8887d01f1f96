"""Minimal define-by-run reverse-mode autodiff on numpy arrays.

The operator set is exactly what the shadow-detection network and its
losses need: 2d cross-correlation and its transpose, sigmoid, leaky relu,
elementwise arithmetic, clamp, log, abs and full reductions. Each forward
call records parent links and a backward closure on the output tensor; the
graph is rebuilt on every pass and replayed once, in reverse topological
order, by ``Tensor.backward``.

Storage is float32 by default; float64 input arrays keep their precision
and everything else is cast to float32. Reductions accumulate in float64
before rounding back to the storage dtype. Running a graph entirely in
float64 tensors exercises the identical code paths in double precision,
which is what the finite-difference test harness does.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ._kernels import corr2d_forward, corr2d_input_grad, corr2d_weight_grad

__all__ = [
    "Tensor",
    "conv2d",
    "deconv2d",
    "sigmoid",
    "hadamard",
    "leaky_relu",
    "add",
    "sub",
    "scale",
    "add_const",
    "sum_all",
    "mean_all",
    "abs_val",
    "log",
    "clamp",
]


class Tensor:
    """N-d array with an optional gradient slot and autodiff parent links."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def accumulate_grad(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Seeds the gradient with 1 and visits every recorded operation
        exactly once, in reverse topological order.
        """
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar over the op functions below
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), other)

    def __mul__(self, other):
        return hadamard(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ValueError(f"mixed tensor dtypes {sorted(map(str, dtypes))}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 2d cross-correlation of x[N,C,H,W] with weight[K,C,kh,kw] plus bias[K]."""
    _check_same_dtype(x, weight, bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({weight.shape[0]},)")
    if stride < 1 or min(weight.shape[2], weight.shape[3]) < 1:
        raise ValueError("conv2d stride and kernel extents must be >= 1")
    y = corr2d_forward(x.data, weight.data, stride, padding)
    y += bias.data[None, :, None, None]
    kh, kw = weight.shape[2], weight.shape[3]
    height, width = x.shape[2], x.shape[3]

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(corr2d_input_grad(gy, weight.data, stride, padding, height, width))
        if weight.requires_grad:
            weight.accumulate_grad(corr2d_weight_grad(x.data, gy, kh, kw, stride, padding))
        if bias.requires_grad:
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return _result(y, (x, weight, bias), backward)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x[N,C,H,W] with weight[C,K,kh,kw] plus bias[K].

    Forward is the adjoint of ``conv2d`` with the same stride and padding:
    output extent is (H - 1) * stride - 2 * padding + kh.
    """
    _check_same_dtype(x, weight, bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"deconv2d expects 4d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(
            f"deconv2d channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"deconv2d bias shape {bias.shape} != ({weight.shape[1]},)")
    kh, kw = weight.shape[2], weight.shape[3]
    out_h = (x.shape[2] - 1) * stride - 2 * padding + kh
    out_w = (x.shape[3] - 1) * stride - 2 * padding + kw
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"deconv2d output extent {out_h}x{out_w} is not positive")
    y = corr2d_input_grad(x.data, weight.data, stride, padding, out_h, out_w)
    y += bias.data[None, :, None, None]

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(corr2d_forward(gy, weight.data, stride, padding))
        if weight.requires_grad:
            weight.accumulate_grad(corr2d_weight_grad(gy, x.data, kh, kw, stride, padding))
        if bias.requires_grad:
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return _result(y, (x, weight, bias), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function, output strictly inside (0, 1)."""
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    one = x.data.dtype.type(1)
    zero = x.data.dtype.type(0)
    np.clip(y, np.nextafter(zero, one), np.nextafter(one, zero), out=y)

    def backward(gy):
        x.accumulate_grad(gy * y * (1.0 - y))

    return _result(y, (x,), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of identically shaped tensors."""
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    y = a.data * b.data

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy * b.data)
        if b.requires_grad:
            b.accumulate_grad(gy * a.data)

    return _result(y, (a, b), backward)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")
    pos = x.data >= 0
    y = np.where(pos, x.data, x.data.dtype.type(slope) * x.data)

    def backward(gy):
        x.accumulate_grad(np.where(pos, gy, x.data.dtype.type(slope) * gy))

    return _result(y, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    y = a.data + b.data

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)
        if b.requires_grad:
            b.accumulate_grad(gy)

    return _result(y, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    y = a.data - b.data

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)
        if b.requires_grad:
            b.accumulate_grad(-gy)

    return _result(y, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.data.dtype.type(factor)
    y = x.data * f

    def backward(gy):
        x.accumulate_grad(gy * f)

    return _result(y, (x,), backward)


def add_const(x: Tensor, constant: float) -> Tensor:
    y = x.data + x.data.dtype.type(constant)

    def backward(gy):
        x.accumulate_grad(gy)

    return _result(y, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar; accumulates in float64."""
    y = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(gy):
        x.accumulate_grad(np.broadcast_to(gy, x.shape).astype(x.data.dtype, copy=True))

    return _result(y, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements as a scalar; accumulates in float64."""
    y = np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype)
    inv = 1.0 / x.size

    def backward(gy):
        x.accumulate_grad(np.broadcast_to(gy * x.data.dtype.type(inv), x.shape).astype(x.data.dtype, copy=True))

    return _result(y, (x,), backward)


def abs_val(x: Tensor) -> Tensor:
    y = np.abs(x.data)
    sign = np.sign(x.data)

    def backward(gy):
        x.accumulate_grad(gy * sign)

    return _result(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    """Natural logarithm; requires strictly positive input."""
    if np.any(x.data <= 0):
        raise ValueError("log requires strictly positive input")
    y = np.log(x.data)

    def backward(gy):
        x.accumulate_grad(gy / x.data)

    return _result(y, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through where lo <= x <= hi."""
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    y = np.clip(x.data, x.data.dtype.type(lo), x.data.dtype.type(hi))
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(gy):
        x.accumulate_grad(np.where(inside, gy, gy.dtype.type(0)))

    return _result(y, (x,), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    """The subset of `tensors` that require gradients."""
    return [t for t in tensors if t.requires_grad]
