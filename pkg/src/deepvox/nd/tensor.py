"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; backward()
walks the graph in reverse topological order and accumulates gradients
into every node that requires them.  Sized for the two small networks in
this package, not a general framework: ops cover dilated conv, SELU,
alpha dropout, pooling, affine, softmax cross-entropy, cosine, gather,
and basic arithmetic/reductions.

Every op checks its result for NaN/Inf and raises NonFiniteError, so a
diverging training run fails at the op that produced the junk rather
than three modules later.
"""

import contextlib
from dataclasses import dataclass

import numpy as np

from . import backend

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


@dataclass(frozen=True)
class ConvSpec:
    """Shape of one conv layer (cross-correlation, no padding)."""

    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1
    stride: int = 1
    bias: bool = True

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_size", "dilation", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be >= 1")


_GUIDED = False
_NO_GRAD = False


@contextlib.contextmanager
def guided_gradients():
    """Within this context, backward() applies guided gating at each SELU:
    gradient flows only where the forward pre-activation was positive AND
    the incoming gradient is positive."""
    global _GUIDED
    prev = _GUIDED
    _GUIDED = True
    try:
        yield
    finally:
        _GUIDED = prev


@contextlib.contextmanager
def no_grad():
    """Suppress graph construction (forward values only)."""
    global _NO_GRAD
    prev = _NO_GRAD
    _NO_GRAD = True
    try:
        yield
    finally:
        _NO_GRAD = prev


def _as_float_array(data):
    a = np.asarray(data)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float32)
    return a


def _check_finite(a, op):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = _as_float_array(data)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    # ---- introspection ----
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # ---- graph plumbing ----
    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None, release=False):
        """Backpropagate from this node.

        seed: upstream gradient (defaults to ones; required semantics only
        make sense for scalars when omitted).  release=True frees each
        interior node's closure, gradient, and data as soon as it has been
        consumed, which caps peak memory at roughly one layer's worth;
        leaf gradients survive.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ValueError(f"seed shape {seed.shape} does not match {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = seed.copy()
        else:
            self.grad += seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if release and node._parents:
                node._backward = None
                node._parents = ()
                node.grad = None
                node.data = None

    # ---- operator sugar ----
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward):
    """Build a graph node; drops the graph when no parent needs gradients."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if not _NO_GRAD and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def zero_grads(tensors):
    for t in tensors.values() if isinstance(tensors, dict) else tensors:
        t.grad = None


# ---- arithmetic / shape ops ----

def add(a, b):
    a, b = _lift(a), _lift(b)
    bd = b.data
    if a.data.shape != bd.shape and bd.ndim != 0:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {bd.shape}")
    data = a.data + bd

    def backward(g):
        a._accumulate(g)
        b._accumulate(g if bd.ndim != 0 else np.asarray(g.sum(), dtype=bd.dtype))

    return _node(data, "add", (a, b), backward)


def mul(a, b):
    a = _lift(a)
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
        data = a.data * b.data

        def backward(g):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

        return _node(data, "mul", (a, b), backward)

    c = float(b)
    data = a.data * np.asarray(c, dtype=a.data.dtype)

    def backward_scalar(g):
        a._accumulate(g * np.asarray(c, dtype=a.data.dtype))

    return _node(data, "mul", (a,), backward_scalar)


def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(old))

    return _node(data, "reshape", (x,), backward)


def transpose(x, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    axes = axes or tuple(reversed(range(x.data.ndim)))
    inverse = np.argsort(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        x._accumulate(g.transpose(inverse))

    return _node(data, "transpose", (x,), backward)


def sum_all(x):
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))

    return _node(data, "sum", (x,), backward)


def mean_all(x):
    n = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=False))

    return _node(data, "mean", (x,), backward)


def take_rows(x, indices):
    """Gather rows of a 2-D tensor; backward scatter-adds (duplicates sum)."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise ValueError(f"take_rows needs a 2-D tensor, got shape {x.data.shape}")
    data = x.data[idx]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, idx, g)

    return _node(data, "take_rows", (x,), backward)


# ---- activations ----

def relu(x):
    data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _node(data, "relu", (x,), backward)


def selu(x):
    lam, alpha = SELU_LAMBDA, SELU_ALPHA
    pos = x.data > 0
    data = np.where(pos, lam * x.data, lam * alpha * np.expm1(np.minimum(x.data, 0.0)))
    data = data.astype(x.data.dtype, copy=False)

    def backward(g):
        if _GUIDED:
            gate = pos & (g > 0)
            x._accumulate(np.where(gate, lam * g, 0).astype(x.data.dtype, copy=False))
        else:
            # d/dx for x<=0 is lam*alpha*exp(x) == value + lam*alpha
            slope = np.where(pos, lam, data + lam * alpha)
            x._accumulate(g * slope)

    return _node(data, "selu", (x,), backward)


def alpha_dropout(x, p, training, rng):
    """Self-normalizing dropout: dropped units saturate at -lambda*alpha and
    the output is affinely rescaled so mean/variance stay put."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    sat = -SELU_LAMBDA * SELU_ALPHA
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    a = ((1.0 - p) * (1.0 + p * sat * sat)) ** -0.5
    b = -a * p * sat
    data = (a * (x.data * keep + sat * (1.0 - keep)) + b).astype(x.data.dtype, copy=False)

    def backward(g):
        x._accumulate(g * (a * keep))

    return _node(data, "alpha_dropout", (x,), backward)


# ---- conv / pool ----

def conv1d(x, w, b=None, stride=1, dilation=1):
    """x: [N,C,L] (or [C,L]), w: [O,C,K], b: [O] or None -> [N,O,L_out]."""
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3 or w.data.ndim != 3:
        raise ValueError(f"conv1d needs 3-D input/weights, got {x.data.shape} and {w.data.shape}")
    if xd.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"conv1d channel mismatch: input {xd.shape} vs weights {w.data.shape}"
        )
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ValueError(f"conv1d bias shape {b.data.shape} does not match weights {w.data.shape}")
    backend.out_length(xd.shape[2], w.data.shape[2], stride, dilation)
    bd = b.data if b is not None else None
    out = backend.conv1d_forward(xd, w.data, bd, stride, dilation)
    data = out[0] if single else out
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g3 = g[None] if single else g
        g3 = np.ascontiguousarray(g3)
        dx, dw, db = backend.conv1d_backward(
            xd, w.data, g3, stride, dilation,
            x.requires_grad, w.requires_grad, b is not None and b.requires_grad,
        )
        if dx is not None:
            x._accumulate(dx[0] if single else dx)
        if dw is not None:
            w._accumulate(dw)
        if db is not None:
            b._accumulate(db)

    return _node(data, "conv1d", parents, backward)


def _pool_prep(x, window, stride):
    if x.data.ndim != 3:
        raise ValueError(f"pooling needs [N,C,L], got shape {x.data.shape}")
    stride = stride or window
    length = x.data.shape[2]
    if window < 1 or window > length:
        raise ValueError(f"pool window {window} invalid for length {length}")
    l_out = (length - window) // stride + 1
    return stride, l_out


def avg_pool1d(x, window, stride=None):
    stride, l_out = _pool_prep(x, window, stride)
    span = (l_out - 1) * stride + 1
    acc = np.zeros(x.data.shape[:2] + (l_out,), dtype=x.data.dtype)
    for r in range(window):
        acc += x.data[:, :, r : r + span : stride]
    data = acc / window

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        gw = g / window
        for r in range(window):
            dx[:, :, r : r + span : stride] += gw
        x._accumulate(dx)

    return _node(data, "avg_pool1d", (x,), backward)


def max_pool1d(x, window, stride=None):
    stride, l_out = _pool_prep(x, window, stride)
    windows = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=2)
    windows = windows[:, :, ::stride, :]
    data = windows.max(axis=3)
    arg = windows.argmax(axis=3)  # first max wins on ties
    span = (l_out - 1) * stride + 1

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for r in range(window):
            dx[:, :, r : r + span : stride] += g * (arg == r)
        x._accumulate(dx)

    return _node(data, "max_pool1d", (x,), backward)


# ---- dense / losses ----

def linear(x, w, b=None):
    """x: [N,I] (or [I]), w: [O,I], b: [O] or None -> [N,O]."""
    single = x.data.ndim == 1
    xd = x.data[None] if single else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.data.shape} vs weights {w.data.shape}")
    out = xd @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"linear bias shape {b.data.shape} does not match weights {w.data.shape}")
        out = out + b.data
    data = out[0] if single else out
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g[None] if single else g
        if x.requires_grad:
            x._accumulate((g2 @ w.data)[0] if single else g2 @ w.data)
        if w.requires_grad:
            w._accumulate(g2.T @ xd)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return _node(data, "linear", parents, backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.
    logits: [N,C] (or [C] with a scalar label)."""
    single = logits.data.ndim == 1
    z = logits.data[None] if single else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    n, c = z.shape
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match logits {z.shape}")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"label out of range for {c} classes")
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    denom = ez.sum(axis=1, keepdims=True)
    log_probs = (z - m) - np.log(denom)
    data = np.asarray(-log_probs[np.arange(n), y].mean(), dtype=z.dtype)

    def backward(g):
        if not logits.requires_grad:
            return
        soft = ez / denom
        soft[np.arange(n), y] -= 1.0
        dz = soft * (g / n)
        logits._accumulate(dz[0] if single else dz.astype(z.dtype, copy=False))

    return _node(data, "softmax_cross_entropy", (logits,), backward)


def cosine(u, v):
    """Cosine similarity: [D]x[D] -> scalar, or [N,D]x[N,D] -> [N] (rowwise)."""
    single = u.data.ndim == 1
    ud = u.data[None] if single else u.data
    vd = v.data[None] if single else v.data
    if ud.shape != vd.shape or ud.ndim != 2:
        raise ValueError(f"cosine shape mismatch: {u.data.shape} vs {v.data.shape}")
    nu = np.sqrt((ud * ud).sum(axis=1))
    nv = np.sqrt((vd * vd).sum(axis=1))
    if nu.min() == 0.0 or nv.min() == 0.0:
        raise ValueError("degenerate embedding: zero norm in cosine()")
    cos = (ud * vd).sum(axis=1) / (nu * nv)
    data = np.asarray(cos[0] if single else cos, dtype=ud.dtype)

    def backward(g):
        g1 = np.atleast_1d(g)[:, None] if not single else np.asarray(g).reshape(1, 1)
        c = cos[:, None]
        if u.requires_grad:
            du = g1 * (vd / (nu * nv)[:, None] - c * ud / (nu * nu)[:, None])
            u._accumulate(du[0] if single else du.astype(ud.dtype, copy=False))
        if v.requires_grad:
            dv = g1 * (ud / (nu * nv)[:, None] - c * vd / (nv * nv)[:, None])
            v._accumulate(dv[0] if single else dv.astype(vd.dtype, copy=False))

    return _node(data, "cosine", (u, v), backward)
