"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient buffer and a record
of how it was produced. Calling backward() on a scalar result walks the
tape in reverse topological order. Every op output is checked for NaN/Inf
and raises NonFiniteError instead of propagating silently.

The gradient tape for one step is single-threaded; op-internal parallelism
(BLAS) does not change results for a fixed thread configuration.
"""

from __future__ import annotations

import math

import numpy as np

from .backend import kernels

EPS_NORM = 1e-8      # cosine-similarity denominator clamp
EPS_LAYERNORM = 1e-5


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


_grad_enabled = True

# test hook: name of an op whose backward contribution gets scaled, used to
# prove the gradient checker catches broken gradients
_fault_op: str | None = None


class no_grad:
    """Context manager disabling tape construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_fault_injection(op_name: str | None) -> None:
    global _fault_op
    _fault_op = op_name


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=data.dtype if isinstance(data, np.ndarray) else np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    def _accumulate(self, grad: np.ndarray, op: str) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad), self.data.shape)
        if _fault_op is not None and op == _fault_op:
            grad = grad * 1.01
        _check_finite(grad, op + ".backward")
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    # -- bookkeeping ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output; reduce first")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(out):
            a._accumulate(out.grad, "add")
            b._accumulate(out.grad, "add")

        return Tensor._make(a.data + b.data, (a, b), bwd, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bwd(out):
            a._accumulate(-out.grad, "neg")

        return Tensor._make(-a.data, (a,), bwd, "neg")

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(out):
            a._accumulate(out.grad, "sub")
            b._accumulate(-out.grad, "sub")

        return Tensor._make(a.data - b.data, (a, b), bwd, "sub")

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(out):
            a._accumulate(out.grad * b.data, "mul")
            b._accumulate(out.grad * a.data, "mul")

        return Tensor._make(a.data * b.data, (a, b), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(out):
            a._accumulate(out.grad / b.data, "div")
            b._accumulate(-out.grad * a.data / (b.data * b.data), "div")

        return Tensor._make(a.data / b.data, (a, b), bwd, "div")

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bwd(out):
            a._accumulate(out.grad.reshape(old), "reshape")

        return Tensor._make(a.data.reshape(shape), (a,), bwd, "reshape")

    def transpose(self, axes) -> "Tensor":
        a = self
        inv = np.argsort(axes)

        def bwd(out):
            a._accumulate(out.grad.transpose(inv), "transpose")

        return Tensor._make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bwd, "transpose")

    def swap_last(self) -> "Tensor":
        """Swap the two trailing axes."""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(tuple(axes))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def bwd(out):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape), "sum")

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bwd, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else (
            math.prod(self.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


# -- free-function ops ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with leading batch dimensions, numpy semantics."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires tensors of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def bwd(out):
        g = out.grad
        a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)), "matmul")
        b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g), "matmul")

    return Tensor._make(np.matmul(a.data, b.data), (a, b), bwd, "matmul")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bwd(out):
        a._accumulate(out.grad * out.data, "exp")

    return Tensor._make(y, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    def bwd(out):
        a._accumulate(out.grad / a.data, "log")

    return Tensor._make(np.log(a.data), (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bwd(out):
        a._accumulate(out.grad * (0.5 / out.data), "sqrt")

    return Tensor._make(y, (a,), bwd, "sqrt")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(out):
        a._accumulate(out.grad * (1.0 - out.data * out.data), "tanh")

    return Tensor._make(y, (a,), bwd, "tanh")


def pow_const(a: Tensor, p: float) -> Tensor:
    def bwd(out):
        a._accumulate(out.grad * p * a.data ** (p - 1), "pow")

    return Tensor._make(a.data ** p, (a,), bwd, "pow")


def relu(a: Tensor) -> Tensor:
    def bwd(out):
        a._accumulate(out.grad * (a.data > 0), "relu")

    return Tensor._make(np.maximum(a.data, 0), (a,), bwd, "relu")


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); gradient is zero on the clamped side."""

    def bwd(out):
        a._accumulate(out.grad * (a.data > c), "maximum_const")

    return Tensor._make(np.maximum(a.data, c), (a,), bwd, "maximum_const")


def gelu(a: Tensor) -> Tensor:
    """tanh-approximate GELU (the package's smooth activation)."""
    flat = np.ascontiguousarray(a.data.reshape(-1))
    y = kernels.gelu_fwd(flat).reshape(a.shape)

    def bwd(out):
        g = kernels.gelu_bwd(flat, np.ascontiguousarray(out.grad.reshape(-1)))
        a._accumulate(g.reshape(a.shape), "gelu")

    return Tensor._make(y, (a,), bwd, "gelu")


def _to_rows(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(data.reshape(-1, data.shape[-1]))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max subtraction."""
    if a.shape[axis if axis >= 0 else a.ndim + axis] < 1:
        raise ShapeError("softmax needs a non-empty axis")
    if axis not in (-1, a.ndim - 1):
        perm = list(range(a.ndim))
        perm[axis], perm[-1] = perm[-1], perm[axis]
        return softmax(a.transpose(tuple(perm)), -1).transpose(tuple(perm))
    rows = _to_rows(a.data)
    y = kernels.softmax_fwd(rows)

    def bwd(out):
        gy = _to_rows(out.grad)
        gx = kernels.softmax_bwd(y, gy)
        a._accumulate(gx.reshape(a.shape), "softmax")

    return Tensor._make(y.reshape(a.shape), (a,), bwd, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = EPS_LAYERNORM) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    rows = _to_rows(x.data)
    y, mu, rstd = kernels.layernorm_fwd(rows, np.ascontiguousarray(gain.data),
                                        np.ascontiguousarray(bias.data), eps)

    def bwd(out):
        gy = _to_rows(out.grad)
        gx, ggain, gbias = kernels.layernorm_bwd(
            rows, mu, rstd, np.ascontiguousarray(gain.data), gy)
        x._accumulate(gx.reshape(x.shape), "layer_norm")
        gain._accumulate(ggain, "layer_norm")
        bias._accumulate(gbias, "layer_norm")

    return Tensor._make(y.reshape(x.shape), (x, gain, bias), bwd, "layer_norm")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) for 1-d vectors, denominator clamped at EPS_NORM."""
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("cosine_similarity expects two equal-length vectors")
    import logging
    na2 = (a * a).sum()
    nb2 = (b * b).sum()
    # inner clamp keeps sqrt differentiable at zero; outer clamp is the
    # documented EPS_NORM denominator floor
    na = sqrt(maximum_const(na2, EPS_NORM ** 3))
    nb = sqrt(maximum_const(nb2, EPS_NORM ** 3))
    if float(na2.data) == 0.0 or float(nb2.data) == 0.0:
        logging.getLogger("crossloc").warning(
            "cosine_similarity received a zero-norm vector; clamping denominator")
    denom = maximum_const(na * nb, EPS_NORM)
    return (a * b).sum() / denom


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Row-wise x / max(||x||, EPS_NORM) for a 2-d tensor."""
    if x.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a 2-d tensor")
    import logging
    sq = (x * x).sum(axis=1, keepdims=True)
    if np.any(sq.data == 0.0):
        logging.getLogger("crossloc").warning(
            "l2_normalize_rows received a zero-norm row; clamping denominator")
    norm = sqrt(maximum_const(sq, EPS_NORM ** 3))
    return x / maximum_const(norm, EPS_NORM)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int, pad: int) -> Tensor:
    """1-d convolution: x (B, Cin, L), w (Cout, Cin, K), b (Cout,)."""
    B, Cin, L = x.shape
    Cout, Cin_w, K = w.shape
    if Cin != Cin_w:
        raise ShapeError(f"conv1d channel mismatch: {Cin} vs {Cin_w}")
    Lp = L + 2 * pad
    Lout = (Lp - K) // stride + 1
    xp = np.zeros((B, Cin, Lp), dtype=x.data.dtype)
    xp[:, :, pad:pad + L] = x.data
    sB, sC, sL = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(B, Cin, Lout, K), strides=(sB, sC, sL * stride, sL), writeable=False)
    y = np.einsum("bclk,ock->bol", win, w.data, optimize=True) + b.data[None, :, None]

    def bwd(out):
        g = out.grad  # (B, Cout, Lout)
        gw = np.einsum("bol,bclk->ock", g, win, optimize=True)
        gb = g.sum(axis=(0, 2))
        gxp = np.zeros_like(xp)
        # scatter through the kernel taps; for fixed k the targets form an
        # arithmetic progression with step `stride`
        gx_cols = np.einsum("bol,ock->bclk", g, w.data, optimize=True)
        for k in range(K):
            gxp[:, :, k:k + stride * Lout:stride] += gx_cols[:, :, :, k]
        x._accumulate(gxp[:, :, pad:pad + L], "conv1d")
        w._accumulate(gw, "conv1d")
        b._accumulate(gb, "conv1d")

    return Tensor._make(np.ascontiguousarray(y), (x, w, b), bwd, "conv1d")
