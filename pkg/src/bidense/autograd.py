"""A small reverse-mode autodiff tape over float64 numpy arrays.

Every differentiable operation returns a :class:`Tensor` that remembers its
inputs and a closure mapping the upstream gradient to input gradients.
:func:`backward` walks the recorded graph in reverse topological order.

Sign is special: its forward is the hard ``±1`` step but its backward uses the
piecewise-polynomial surrogate derivative ``2 - 2|x|`` on ``|x| <= 1``.  Inside
:func:`smooth_sign` the forward switches to the surrogate itself so that finite
differences see the same function the tape differentiates.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cfb
from .tensor import im2col, real_conv2d

_state = {"grad": True, "smooth": False}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def smooth_sign(enabled: bool = True):
    prev = _state["smooth"]
    _state["smooth"] = enabled
    try:
        yield
    finally:
        _state["smooth"] = prev


def is_smooth() -> bool:
    return _state["smooth"]


class Tensor:
    """A tape node: value, optional gradient slot, and how it was produced."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.data.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _state["grad"] and any(p.requires_grad for p in parents):
        return Tensor(data, True, None, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(x: Tensor) -> Tensor:
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` where positive, ``slope * x`` elsewhere; ``slope`` broadcasts."""
    pos = x.data > 0
    out = np.where(pos, x.data, slope.data * x.data)

    def back(g):
        gx = g * np.where(pos, 1.0, slope.data)
        gs = _unbroadcast(g * np.where(pos, 0.0, x.data), slope.shape)
        return gx, gs

    return _node(out, (x, slope), back, "prelu")


def surrogate_sign(x: np.ndarray) -> np.ndarray:
    """Piecewise quadratic approximation of Sign whose derivative is ``2 - 2|x|``."""
    return np.where(x < -1, -1.0, np.where(x < 0, 2 * x + x * x,
                    np.where(x < 1, 2 * x - x * x, 1.0)))


def surrogate_grad(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) <= 1, 2.0 - 2.0 * np.abs(x), 0.0)


def sign_ste(x: Tensor) -> Tensor:
    """Sign with Sign(0)=+1 forward and the surrogate derivative backward."""
    out = surrogate_sign(x.data) if _state["smooth"] else np.where(x.data >= 0, 1.0, -1.0)
    return _node(out, (x,), lambda g: (g * surrogate_grad(x.data),), "sign")


# ------------------------------------------------------------------ reductions

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.size(out), 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(out, (x,), back, "mean")


# -------------------------------------------------------------- shape plumbing

def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    out = np.broadcast_to(x.data, x.shape[:2] + (h, w)).copy()
    return _node(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),), "broadcast")


def channel_fusion(x: Tensor, plan: cfb.FusionPlan) -> Tensor:
    return _node(cfb.apply_fusion(x.data, plan), (x,),
                 lambda g: (cfb.fusion_adjoint(g, plan),), "fusion")


def align(x: Tensor, h: int, w: int, mode: str) -> Tensor:
    src_h, src_w = x.shape[2:]
    return _node(cfb.align_spatial(x.data, h, w, mode), (x,),
                 lambda g: (cfb.align_adjoint(g, src_h, src_w, mode),), f"align_{mode}")


def _bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize_bilinear(x: Tensor, h: int, w: int) -> Tensor:
    """Half-pixel-centre bilinear resize, as a separable linear map."""
    mh = _bilinear_matrix(h, x.shape[2])
    mw = _bilinear_matrix(w, x.shape[3])
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return _node(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),), "bilinear")


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1,
           pad_value: float = 0.0) -> Tensor:
    out = real_conv2d(x.data, w.data, stride, padding, groups, pad_value)

    def back(g):
        n, c, h, wd = x.shape
        c_out, c_in_g, kh, kw = w.shape
        out_g = c_out // groups
        ho, wo = g.shape[2:]
        gg = g.reshape(n, groups, out_g, ho * wo)
        xp = x.data
        if padding:
            xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                        constant_values=pad_value)
        if c_in_g == 1 and out_g == 1:
            return _depthwise_back(g, xp, w.data, stride, padding)
        cols = im2col(xp, kh, kw, stride, groups)
        wg = w.data.reshape(groups, out_g, c_in_g * kh * kw)
        gw = np.matmul(gg, cols.transpose(0, 1, 3, 2)).sum(axis=0)
        gcols = np.matmul(wg.transpose(0, 2, 1), gg)
        gcols = gcols.reshape(n, groups, c_in_g, kh, kw, ho, wo)
        gx = np.zeros((n, groups, c_in_g) + xp.shape[2:])
        for ky in range(kh):
            for kx in range(kw):
                ys = slice(ky, ky + stride * ho, stride)
                xs = slice(kx, kx + stride * wo, stride)
                gx[:, :, :, ys, xs] += gcols[:, :, :, ky, kx]
        gx = gx.reshape(xp.shape)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return gx, gw.reshape(w.shape)

    return _node(out, (x, w), back, "conv2d")


def _depthwise_back(g, xp, w, stride, padding):
    ho, wo = g.shape[2:]
    kh, kw = w.shape[2:]
    gx = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ky in range(kh):
        for kx in range(kw):
            ys = slice(ky, ky + stride * ho, stride)
            xs = slice(kx, kx + stride * wo, stride)
            gw[:, 0, ky, kx] = np.einsum("nchw,nchw->c", g, xp[:, :, ys, xs])
            gx[:, :, ys, xs] += g * w[None, :, 0, ky, kx, None, None]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx, gw


# -------------------------------------------------------------- normalisation

def batch_norm_train(x: Tensor, gain: Tensor, bias: Tensor, eps: float):
    """Training-mode batch norm; returns the output and the batch mean/variance."""
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    centred = x.data - mu
    var = (centred ** 2).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    g4 = gain.data.reshape(1, -1, 1, 1)
    out = xhat * g4 + bias.data.reshape(1, -1, 1, 1)
    m = x.data.size // x.shape[1]

    def back(g):
        dxhat = g * g4
        gx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _node(out, (x, gain, bias), back, "batchnorm"), mu.ravel(), var.ravel()


def batch_norm_eval(x: Tensor, gain: Tensor, bias: Tensor, mu: np.ndarray, var: np.ndarray,
                    eps: float) -> Tensor:
    inv = (1.0 / np.sqrt(var + eps)).reshape(1, -1, 1, 1)
    xhat = (x.data - mu.reshape(1, -1, 1, 1)) * inv
    g4 = gain.data.reshape(1, -1, 1, 1)
    out = xhat * g4 + bias.data.reshape(1, -1, 1, 1)

    def back(g):
        return g * g4 * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _node(out, (x, gain, bias), back, "batchnorm")


# --------------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-softmax (over channels) of the labelled class per pixel."""
    z = logits.data
    labels = np.asarray(labels)
    valid = np.ones(labels.shape, bool) if ignore_index is None else labels != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no labelled pixels")
    safe = np.where(valid, labels, 0).astype(np.int64)
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / count

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe[:, None],
                          np.take_along_axis(grad, safe[:, None], axis=1) - 1.0, axis=1)
        return (g * grad * valid[:, None] / count,)

    return _node(np.asarray(loss), (logits,), back, "cross_entropy")


# ------------------------------------------------------------------- backward

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Sets ``.grad`` on every reachable leaf that requires a gradient and
    returns ``{id(leaf): grad}``.  Leaves in ``params`` that the loss does not
    reach get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss is detached from every parameter")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[id(node)] = g
            node.grad = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise FloatingPointError(f"non-finite gradient flowing out of '{node.op}'")
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if params is not None:
        for p in params:
            if id(p) not in leaves:
                p.grad = np.zeros_like(p.data)
                leaves[id(p)] = p.grad
    return leaves
