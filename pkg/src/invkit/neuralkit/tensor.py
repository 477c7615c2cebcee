"""Reverse-mode automatic differentiation on numpy arrays.

Operations record themselves on a dynamic tape: each result keeps references
to its parents and a closure mapping the upstream gradient to one gradient
per parent. Nothing is recorded unless some input requires a gradient.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def graph(self) -> list["Tensor"]:
        """Recorded nodes reachable from this tensor, parents before children."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, upstream=None):
        """Accumulate vector-Jacobian products into ``.grad`` of every leaf that requires it."""
        if not self.requires_grad:
            raise GraphError("backward called on a tensor with no recorded graph")
        if upstream is None:
            if self.data.size != 1:
                raise GraphError("upstream gradient required for non-scalar output")
            upstream = np.ones_like(self.data)
        upstream = np.asarray(getattr(upstream, "data", upstream), dtype=np.float64)
        if upstream.shape != self.data.shape:
            raise GraphError(f"upstream shape {upstream.shape} != output shape {self.data.shape}")
        grads = {id(self): upstream}
        for node in reversed(self.graph()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p != 2:
            raise ValueError("only squaring is supported")
        return mul(self, self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mul(tsum(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


residual_add = add


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)), "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def tsum(a) -> Tensor:
    shape = a.shape
    return _make(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def take_rows(a, idx) -> Tensor:
    idx = np.asarray(idx)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back, "take_rows")


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def relu(a) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=0.01) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def dense(x, weight, bias) -> Tensor:
    """``x @ W^T + b`` for ``x`` of shape (N, in) and ``W`` of shape (out, in)."""
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def back(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _make(out, (x, weight, bias), back, "dense")


def _corr_same(x, w):
    """Zero-padded 'same' cross-correlation: (N,C,H,W) x (O,C,k,k) -> (N,O,H,W)."""
    k = w.shape[-1]
    p = k // 2
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(x, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N,H,W,O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


def conv2d(x, weight, bias) -> Tensor:
    """Stride-1 convolution layer with zero 'same' padding and odd square kernels."""
    k = weight.shape[-1]
    if k % 2 == 0 or weight.shape[-2] != k:
        raise ValueError("conv2d needs an odd square kernel")
    if x.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d input {x.shape} incompatible with weight {weight.shape}")
    wd = weight.data
    out, cols = _corr_same(x.data, wd)
    out += bias.data[None, :, None, None]

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # O,C,k,k
        gb = g.sum(axis=(0, 2, 3))
        wt = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _corr_same(g, wt)
        return gx, gw, gb

    return _make(out, (x, weight, bias), back, "conv2d")


def upsample_nearest(x, factor: int) -> Tensor:
    f = int(factor)
    out = x.data.repeat(f, axis=-2).repeat(f, axis=-1)

    def back(g):
        s = g.shape
        return (g.reshape(s[:-2] + (s[-2] // f, f, s[-1] // f, f)).sum(axis=(-3, -1)),)

    return _make(out, (x,), back, "upsample_nearest")


def channel_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    """Normalize every (sample, channel) plane to zero mean and unit variance, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = gd * xhat + beta.data[None, :, None, None]

    def back(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=(2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, (x, gamma, beta), back, "channel_norm")


def linear_map(x, forward: Callable, transpose: Callable, op="linear_map") -> Tensor:
    """Apply a fixed linear map whose transpose is supplied by the caller."""
    return _make(forward(x.data), (x,), lambda g: (transpose(g),), op)


def custom(x, forward: Callable, vjp: Callable, op="custom") -> Tensor:
    """Apply ``forward`` with a caller-supplied ``vjp(x_data, g)``."""
    xd = x.data
    return _make(forward(xd), (x,), lambda g: (vjp(xd, g),), op)


def sum_squares(a) -> Tensor:
    return tsum(mul(a, a))


def mse(pred, target) -> Tensor:
    diff = add(pred, neg(as_tensor(target)))
    return mul(sum_squares(diff), 1.0 / diff.data.size)


def parameters_of(*objs) -> Sequence[Tensor]:
    out = []
    for o in objs:
        out.extend(o.parameters())
    return out
