"""Minimal reverse-mode automatic differentiation on numpy arrays.

Tensors wrap an ndarray and record the ops applied to them; calling
``backward()`` on a scalar result accumulates gradients into every
reachable tensor created with ``requires_grad=True``. Only the ops needed
by the small convolutional networks in this package are provided. Dtype
follows the input arrays, so the same graph code runs in float32 for
training and float64 for finite-difference checks.
"""

import numpy as np


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise RuntimeError("backward() requires a scalar loss")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(other))

    def __pow__(self, k):
        return power(self, k)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


wrap = _wrap


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (the reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out_data, parents=(a, b), backward=backward)


def power(a, k):
    a = _wrap(a)
    k = float(k)
    out_data = a.data ** k

    def backward(g):
        if a.requires_grad:
            a.grad += g * k * a.data ** (k - 1.0)

    return Tensor(out_data, parents=(a,), backward=backward)


def exp(a):
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * out_data

    return Tensor(out_data, parents=(a,), backward=backward)


def absolute(a):
    a = _wrap(a)
    out_data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * np.sign(a.data)

    return Tensor(out_data, parents=(a,), backward=backward)


def relu(a):
    a = _wrap(a)
    keep = a.data > 0
    out_data = np.where(keep, a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.grad += g * keep

    return Tensor(out_data, parents=(a,), backward=backward)


def sigmoid(a):
    a = _wrap(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a.grad += g * out_data * (1.0 - out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def tanh(a):
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out_data * out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def clip01(a):
    """Clamp to [0, 1]; gradient is zero outside the active range."""
    a = _wrap(a)
    inside = (a.data >= 0.0) & (a.data <= 1.0)
    out_data = np.clip(a.data, 0.0, 1.0)

    def backward(g):
        if a.requires_grad:
            a.grad += g * inside

    return Tensor(out_data, parents=(a,), backward=backward)


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a.grad += np.broadcast_to(g, a.data.shape)
            else:
                gg = g
                if not keepdims:
                    gg = np.expand_dims(g, axis)
                a.grad += np.broadcast_to(gg, a.data.shape)

    return Tensor(out_data, parents=(a,), backward=backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    return Tensor(out_data, parents=(a,), backward=backward)


def concat_channels(tensors):
    """Concatenate NCHW tensors along the channel axis."""
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=1)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t.grad += part

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def _im2col(xp, kh, kw):
    """(N, C, Hp, Wp) padded input -> (N, C*kh*kw, H*W) column matrix."""
    n, c, hp, wp = xp.shape
    h, w = hp - kh + 1, wp - kw + 1
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kh, kw, h, w), strides=(s0, s1, s2, s3, s2, s3)
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, h * w)


def conv2d(x, w, b=None):
    """Same-padded stride-1 2D convolution (cross-correlation).

    x: (N, Ci, H, W); w: (Co, Ci, kh, kw) with odd kh, kw; b: (Co,) or None.
    """
    x, w = _wrap(x), _wrap(w)
    n, ci, h, wd = x.data.shape
    co, ci_w, kh, kw = w.data.shape
    if ci != ci_w:
        raise ValueError(f"conv2d channel mismatch: input {ci}, weight {ci_w}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw)
    w_flat = w.data.reshape(co, ci * kh * kw)
    out_data = np.matmul(w_flat[None], cols).reshape(n, co, h, wd)
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        out_data = out_data + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        g_flat = g.reshape(n, co, h * wd)
        if w.requires_grad:
            dw = np.matmul(g_flat, cols.transpose(0, 2, 1)).sum(axis=0)
            w.grad += dw.reshape(w.data.shape)
        if b is not None and b.requires_grad:
            b.grad += g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.matmul(w_flat.T[None], g_flat)
            dcols = dcols.reshape(n, ci, kh, kw, h, wd)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, i, j]
            x.grad += dxp[:, :, ph : ph + h, pw : pw + wd]

    return Tensor(out_data, parents=tuple(parents), backward=backward)


def avg_pool2(x):
    """2x2 average pooling; spatial dims must be even."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        if x.requires_grad:
            x.grad += np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25

    return Tensor(out_data, parents=(x,), backward=backward)


def upsample2(x):
    """Nearest-neighbour 2x upsampling."""
    x = _wrap(x)
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        if x.requires_grad:
            n, c, h, w = x.data.shape
            x.grad += g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return Tensor(out_data, parents=(x,), backward=backward)


def linear(x, w, b=None):
    """x: (N, D) @ w: (D, K) + b."""
    x, w = _wrap(x), _wrap(w)
    out_data = x.data @ w.data
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        out_data = out_data + b.data
        parents.append(b)

    def backward(g):
        if x.requires_grad:
            x.grad += g @ w.data.T
        if w.requires_grad:
            w.grad += x.data.T @ g
        if b is not None and b.requires_grad:
            b.grad += g.sum(axis=0)

    return Tensor(out_data, parents=tuple(parents), backward=backward)
