"""Tape-based reverse-mode autodiff over float32 numpy arrays.

Small on purpose: only the ops the velocity network needs. Every op records
its parents and a closure computing the vector-Jacobian products; calling
``backward()`` on a scalar walks the tape in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import DomainError, ShapeMismatchError, StateError

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (inference / frozen models)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data, dtype=np.float32)
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise StateError("backward requires a scalar loss")
        if not self._parents and not self.requires_grad:
            raise StateError("backward called with no recorded computation")
        topo, visited, stack = [], set(), [self]
        while stack:
            node = stack[-1]
            if id(node) in visited:
                stack.pop()
                continue
            pending = [p for p in node._parents if id(p) not in visited]
            if pending:
                stack.extend(pending)
            else:
                visited.add(id(node))
                topo.append(node)
                stack.pop()
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.astype(np.float32, copy=False)
                else:
                    parent.grad += g

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _record(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` over the axes numpy broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _record(data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(data, (a, b), bw)


def square(a):
    return mul(a, a)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(data, (a, b), bw)


def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.data.shape
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(orig),)

    return _record(data, (a,), bw)


def tsum(a):
    a = _as_tensor(a)
    data = np.float32(a.data.sum())

    def bw(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _record(data, (a,), bw)


def tmean(a):
    a = _as_tensor(a)
    data = np.float32(a.data.mean())
    n = a.data.size

    def bw(g):
        return (np.broadcast_to(g / n, a.data.shape).astype(np.float32),)

    return _record(data, (a,), bw)


def silu(a):
    a = _as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def bw(g):
        # sig * (1 + x * (1 - sig)), built in place
        tmp = 1.0 - sig
        tmp *= a.data
        tmp += 1.0
        tmp *= sig
        tmp *= g
        return (tmp,)

    return _record(data, (a,), bw)


def clamp(a, lo, hi):
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _record(data, (a,), bw)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))

    return _record(data, tensors, bw)


def upsample_nearest2x(a):
    a = _as_tensor(a)
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)
    b, c, h, w = a.data.shape

    def bw(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(data, (a,), bw)


def _conv1x1(x, w, bias):
    """Pointwise convolution: per-sample GEMM, no patch matrix."""
    b, cin, h, wd = x.data.shape
    cout = w.data.shape[0]
    wmat = w.data.reshape(cout, cin)
    data = np.empty((b, cout, h, wd), dtype=np.float32)
    xmat = x.data.reshape(b, cin, h * wd)
    for i in range(b):
        np.matmul(wmat, xmat[i], out=data[i].reshape(cout, h * wd))
    if bias is not None:
        data += bias.data.reshape(1, cout, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gmat = g.reshape(b, cout, h * wd)
        gx = np.empty_like(x.data)
        gw = np.zeros((cout, cin), dtype=np.float32)
        for i in range(b):
            np.matmul(wmat.T, gmat[i], out=gx[i].reshape(cin, h * wd))
            gw += gmat[i] @ xmat[i].T
        if bias is None:
            return gx, gw.reshape(w.data.shape)
        return gx, gw.reshape(w.data.shape), g.sum(axis=(0, 2, 3))

    return _record(data, parents, bw)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """2-D cross-correlation, zero padding, square stride."""
    x, w = _as_tensor(x), _as_tensor(w)
    if bias is not None:
        bias = _as_tensor(bias)
    b, cin, h, wd = x.data.shape
    cout, cin2, kh, kw = w.data.shape
    if cin != cin2:
        raise ShapeMismatchError(f"conv2d channels: input {cin}, weight {cin2}")
    s, p = int(stride), int(padding)
    if kh == 1 and kw == 1 and s == 1 and p == 0:
        return _conv1x1(x, w, bias)
    if p:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatchError(f"conv2d output would be empty for input {x.data.shape}")
    cols = _kernels.im2col(xp, kh, kw, s, s, ho, wo)   # (cin*kh*kw, b*ho*wo)
    wmat = w.data.reshape(cout, -1)
    out = wmat @ cols                                   # (cout, b*ho*wo)
    if bias is not None:
        out += bias.data[:, None]
    data = np.ascontiguousarray(
        out.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3))
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gw = (gmat @ cols.T).reshape(cout, cin, kh, kw)
        gcols = wmat.T @ gmat
        gxp = _kernels.col2im(gcols, b, cin, hp, wp, kh, kw, s, s, ho, wo)
        gx = gxp[:, :, p:hp - p, p:wp - p] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=1)

    return _record(data, parents, bw)


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """GroupNorm over (C/groups, H, W) per sample, affine per channel."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    b, c, h, w = x.data.shape
    if c % groups:
        raise DomainError(f"channels {c} not divisible by {groups} groups")
    xg = x.data.reshape(b, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(b, c, h, w)
    gam = gamma.data.reshape(1, c, 1, 1)
    data = xhat * gam + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gam).reshape(b, groups, -1)
        xh = xhat.reshape(b, groups, -1)
        m1 = dxhat.mean(axis=2, keepdims=True)
        m2 = (dxhat * xh).mean(axis=2, keepdims=True)
        gx = dxhat
        gx -= m1
        gx -= xh * m2
        gx *= inv
        return (gx.reshape(b, c, h, w).astype(np.float32, copy=False),
                ggamma, gbeta)

    return _record(data, (x, gamma, beta), bw)
