"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every function here accepts either plain ndarrays (evaluated eagerly,
no graph) or :class:`Tensor` leaves (recorded on an implicit tape).
Network code is therefore written once and runs in both inference and
training mode.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """A node in the computation graph wrapping one ndarray."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    # keep numpy from consuming us in mixed expressions; defer to __r*__
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"

    # -- graph traversal ------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis=axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def item(self):
        return float(self.value)


def _is_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def constant(x, dtype=None):
    """Plain array view of ``x`` (detached from any graph)."""
    v = _val(x)
    return v.astype(dtype) if dtype is not None else v


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic -----------------------------------------------------------


def add(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.asarray(a) + np.asarray(b)
    av, bv = _val(a), _val(b)
    out_val = av + bv

    def backward(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g, av.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(g, bv.shape))

    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))
    return Tensor(out_val, parents, backward)


def mul(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.asarray(a) * np.asarray(b)
    av, bv = _val(a), _val(b)
    out_val = av * bv

    def backward(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g * bv, av.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(g * av, bv.shape))

    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))
    return Tensor(out_val, parents, backward)


def power(a, exponent):
    exponent = float(exponent)
    if not isinstance(a, Tensor):
        return np.asarray(a) ** exponent
    av = a.value
    out_val = av ** exponent

    def backward(g):
        a._accum(g * exponent * av ** (exponent - 1.0))

    return Tensor(out_val, (a,), backward)


def matmul(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.asarray(a) @ np.asarray(b)
    av, bv = _val(a), _val(b)
    out_val = av @ bv

    def backward(g):
        if isinstance(a, Tensor):
            a._accum(g @ bv.T if bv.ndim == 2 else np.outer(g, bv))
        if isinstance(b, Tensor):
            b._accum(av.T @ g if av.ndim == 2 else np.outer(av, g))

    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))
    return Tensor(out_val, parents, backward)


def reduce_sum(a, axis=None):
    if not isinstance(a, Tensor):
        return np.asarray(a).sum(axis=axis)
    av = a.value
    out_val = av.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, av.shape))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), av.shape))

    return Tensor(out_val, (a,), backward)


def reduce_mean(a, axis=None):
    n = _val(a).size if axis is None else _val(a).shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


# -- shape ops ------------------------------------------------------------


def reshape(a, shape):
    if not isinstance(a, Tensor):
        return np.asarray(a).reshape(shape)
    av = a.value
    out_val = av.reshape(shape)

    def backward(g):
        a._accum(g.reshape(av.shape))

    return Tensor(out_val, (a,), backward)


def _is_basic_index(idx) -> bool:
    if isinstance(idx, (int, slice)):
        return True
    if isinstance(idx, tuple):
        return all(isinstance(i, (int, slice)) for i in idx)
    return False


def take(a, idx):
    """Static indexing/slicing; gradient scatters back into place."""
    if not isinstance(a, Tensor):
        return np.asarray(a)[idx]
    av = a.value
    out_val = av[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(av)
        if basic:  # no repeated elements possible
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        a._accum(full)

    return Tensor(out_val, (a,), backward)


def concat(xs, axis=0):
    if not _is_tensor(*xs):
        return np.concatenate([np.asarray(x) for x in xs], axis=axis)
    vals = [_val(x) for x in xs]
    out_val = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if isinstance(x, Tensor):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x._accum(g[tuple(sl)])

    parents = tuple(x for x in xs if isinstance(x, Tensor))
    return Tensor(out_val, parents, backward)


def stack(xs, axis=0):
    if not _is_tensor(*xs):
        return np.stack([np.asarray(x) for x in xs], axis=axis)
    vals = [_val(x) for x in xs]
    out_val = np.stack(vals, axis=axis)

    def backward(g):
        for i, x in enumerate(xs):
            if isinstance(x, Tensor):
                x._accum(np.take(g, i, axis=axis))

    parents = tuple(x for x in xs if isinstance(x, Tensor))
    return Tensor(out_val, parents, backward)


# -- nonlinearities -------------------------------------------------------


def relu(a):
    if not isinstance(a, Tensor):
        return np.maximum(np.asarray(a), 0.0)
    av = a.value
    out_val = np.maximum(av, 0.0)

    def backward(g):
        a._accum(g * (av > 0.0))

    return Tensor(out_val, (a,), backward)


def sigmoid(a):
    if not isinstance(a, Tensor):
        av = np.asarray(a)
        return 1.0 / (1.0 + np.exp(-av))
    out_val = 1.0 / (1.0 + np.exp(-a.value))

    def backward(g):
        a._accum(g * out_val * (1.0 - out_val))

    return Tensor(out_val, (a,), backward)


def tanh(a):
    if not isinstance(a, Tensor):
        return np.tanh(np.asarray(a))
    out_val = np.tanh(a.value)

    def backward(g):
        a._accum(g * (1.0 - out_val * out_val))

    return Tensor(out_val, (a,), backward)


def log_softmax(a, axis=-1):
    """Numerically stable log softmax along ``axis``."""
    av = _val(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_val = shifted - lse
    if not _is_tensor(a):
        return out_val
    probs = np.exp(out_val)

    def backward(g):
        a._accum(g - probs * g.sum(axis=axis, keepdims=True))

    return Tensor(out_val, (a,), backward)


def softmax(a, axis=-1):
    ls = log_softmax(a, axis=axis)
    if isinstance(ls, Tensor):
        return exp(ls)
    return np.exp(ls)


def exp(a):
    if not isinstance(a, Tensor):
        return np.exp(np.asarray(a))
    out_val = np.exp(a.value)

    def backward(g):
        a._accum(g * out_val)

    return Tensor(out_val, (a,), backward)


def log(a):
    if not isinstance(a, Tensor):
        return np.log(np.asarray(a))
    av = a.value
    out_val = np.log(av)

    def backward(g):
        a._accum(g / av)

    return Tensor(out_val, (a,), backward)


def lstm_cell(x, h, c, w, b, forget_bias=0.0):
    """Fused LSTM cell; returns hstack(h', c') of shape (batch, 2*n).

    Gate layout along the weight columns is (input, forget, candidate,
    output). A single node keeps the tape small; the backward pass is
    the standard hand-derived cell gradient.
    """
    xv, hv, cv, wv, bv = _val(x), _val(h), _val(c), _val(w), _val(b)
    n = hv.shape[1]
    xh = np.concatenate([xv, hv], axis=1)
    z = xh @ wv + bv
    i = 1.0 / (1.0 + np.exp(-z[:, :n]))
    f = 1.0 / (1.0 + np.exp(-(z[:, n : 2 * n] + forget_bias)))
    g = np.tanh(z[:, 2 * n : 3 * n])
    o = 1.0 / (1.0 + np.exp(-z[:, 3 * n :]))
    c_new = f * cv + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    out_val = np.concatenate([h_new, c_new], axis=1)
    if not (isinstance(x, Tensor) or isinstance(h, Tensor) or isinstance(c, Tensor)
            or isinstance(w, Tensor) or isinstance(b, Tensor)):
        return out_val

    def backward(grad):
        dh = grad[:, :n]
        dc_in = grad[:, n:]
        do = dh * tc
        dc = dc_in + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * cv
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        if isinstance(w, Tensor):
            w._accum(xh.T @ dz)
        if isinstance(b, Tensor):
            b._accum(dz.sum(axis=0))
        if isinstance(x, Tensor) or isinstance(h, Tensor):
            dxh = dz @ wv.T
            if isinstance(x, Tensor):
                x._accum(dxh[:, : xv.shape[1]])
            if isinstance(h, Tensor):
                h._accum(dxh[:, xv.shape[1] :])
        if isinstance(c, Tensor):
            c._accum(dc * f)

    parents = tuple(t for t in (x, h, c, w, b) if isinstance(t, Tensor))
    return Tensor(out_val, parents, backward)


# -- convolutions ---------------------------------------------------------
#
# Layouts: activations (N, H, W, C); conv kernels (F, kh, kw, C);
# transposed-conv kernels (C, kh, kw, F). Valid padding only.


def _im2col(x, kh, kw, stride):
    """(N, H, W, C) -> columns (N*H'*W', kh*kw*C) plus the out spatial dims."""
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, oh, ow = v.shape[:3]
    cols = np.ascontiguousarray(v.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * oh * ow, kh * kw * x.shape[3]
    )
    return cols, oh, ow


def _kernel_matrix(w):
    """(F, kh, kw, C) -> (kh*kw*C, F)."""
    f = w.shape[0]
    return np.ascontiguousarray(w.transpose(1, 2, 3, 0)).reshape(-1, f)


def conv2d(x, w, b, stride):
    if not _is_tensor(x, w, b):
        xv, wv = np.asarray(x), np.asarray(w)
        f, kh, kw, _ = wv.shape
        cols, oh, ow = _im2col(xv, kh, kw, stride)
        out = cols @ _kernel_matrix(wv)
        return out.reshape(xv.shape[0], oh, ow, f) + np.asarray(b)
    xv, wv, bv = _val(x), _val(w), _val(b)
    f, kh, kw, c = wv.shape
    cols, oh, ow = _im2col(xv, kh, kw, stride)
    wmat = _kernel_matrix(wv)
    out_val = (cols @ wmat).reshape(xv.shape[0], oh, ow, f) + bv

    def backward(g):
        g_flat = g.reshape(-1, f)
        if isinstance(w, Tensor):
            dwmat = cols.T @ g_flat  # (kh*kw*C, F)
            w._accum(dwmat.reshape(kh, kw, c, f).transpose(3, 0, 1, 2))
        if isinstance(b, Tensor):
            b._accum(g.sum(axis=(0, 1, 2)))
        if isinstance(x, Tensor):
            dcols = (g_flat @ wmat.T).reshape(xv.shape[0], oh, ow, kh, kw, c)
            dx = np.zeros_like(xv)
            for u in range(kh):
                for v in range(kw):
                    dx[:, u : u + oh * stride : stride, v : v + ow * stride : stride, :] += (
                        dcols[:, :, :, u, v, :]
                    )
            x._accum(dx)

    parents = tuple(t for t in (x, w, b) if isinstance(t, Tensor))
    return Tensor(out_val, parents, backward)


def conv2d_transpose(x, w, b, stride):
    """Fractionally strided conv: (N,h,w,C) -> (N,(h-1)s+kh,(w-1)s+kw,F)."""

    def _forward(xv, wv, bv):
        n, h, ww, _ = xv.shape
        c, kh, kw, f = wv.shape
        out = np.zeros((n, (h - 1) * stride + kh, (ww - 1) * stride + kw, f), dtype=xv.dtype)
        flat = xv.reshape(-1, c)
        for u in range(kh):
            for v in range(kw):
                out[:, u : u + h * stride : stride, v : v + ww * stride : stride, :] += (
                    (flat @ wv[:, u, v, :]).reshape(n, h, ww, f)
                )
        return out + bv

    if not _is_tensor(x, w, b):
        return _forward(np.asarray(x), np.asarray(w), np.asarray(b))
    xv, wv, bv = _val(x), _val(w), _val(b)
    out_val = _forward(xv, wv, bv)
    c, kh, kw, f = wv.shape
    n, h, ww, _ = xv.shape

    def backward(g):
        if isinstance(b, Tensor):
            b._accum(g.sum(axis=(0, 1, 2)))
        x_flat = xv.reshape(-1, c)
        dx = np.zeros_like(xv) if isinstance(x, Tensor) else None
        dw = np.zeros_like(wv) if isinstance(w, Tensor) else None
        for u in range(kh):
            for v in range(kw):
                g_uv = g[:, u : u + h * stride : stride, v : v + ww * stride : stride, :]
                g_flat = g_uv.reshape(-1, f)
                if dw is not None:
                    dw[:, u, v, :] = x_flat.T @ g_flat
                if dx is not None:
                    dx += (g_flat @ wv[:, u, v, :].T).reshape(xv.shape)
        if dw is not None:
            w._accum(dw)
        if dx is not None:
            x._accum(dx)

    parents = tuple(t for t in (x, w, b) if isinstance(t, Tensor))
    return Tensor(out_val, parents, backward)
