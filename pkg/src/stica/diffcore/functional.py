"""Differentiable primitives: eager numpy forward + recorded VJP closures.

Every public op lifts plain arrays/scalars to Tensors, validates shapes,
computes the forward value, and registers a node on the active tape. The
VJP closures capture only what the reverse pass needs.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _special

from .tensor import ShapeError, Tensor, _record

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "matmul",
    "exp", "log", "sqrt", "tanh", "sigmoid", "relu", "softplus", "gelu",
    "softmax", "log_softmax", "layer_norm",
    "reduce_sum", "reduce_mean", "reshape", "transpose", "concat", "stack",
    "getitem", "index_select", "embedding_lookup", "one_hot", "st_onehot",
    "maximum", "where", "conv2d", "upsample_nearest2d", "gru_cell",
    "apply_primitive", "PRIMITIVES",
]


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and np.issubdtype(like.dtype, np.floating) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_ok(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# arithmetic

def _binary(name, fwd, vjp_a, vjp_b):
    def op(a, b):
        a = _lift(a, b if isinstance(b, Tensor) else None)
        b = _lift(b, a)
        _broadcast_ok(name, a, b)
        out = fwd(a.data, b.data)

        def vjp(g):
            return (_unbroadcast(vjp_a(g, a.data, b.data), a.shape),
                    _unbroadcast(vjp_b(g, a.data, b.data), b.shape))

        return _record((a, b), out, vjp)

    op.__name__ = name
    return op


add = _binary("add", lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)
sub = _binary("sub", lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)
mul = _binary("mul", lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)
div = _binary("div", lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))
maximum = _binary("maximum", np.maximum,
                  lambda g, x, y: g * (x >= y),
                  lambda g, x, y: g * (x < y))


def neg(a):
    a = _lift(a)
    return _record((a,), -a.data, lambda g: (-g,))


def power(a, p):
    """Elementwise a**p for a scalar (non-tensor) exponent."""
    a = _lift(a)
    p = float(p)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record((a,), out, vjp)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record((a, b), out, vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return _record((a,), out, lambda g: (g * out,))


def log(a):
    a = _lift(a)
    return _record((a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)
    return _record((a,), out, lambda g: (g * 0.5 / out,))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return _record((a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = _lift(a)
    out = _sigmoid_np(a.data)
    return _record((a,), out, lambda g: (g * out * (1.0 - out),))


def _sigmoid_np(x):
    # numerically stable two-sided form
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a):
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    return _record((a,), out, lambda g: (g * (a.data > 0),))


def softplus(a):
    """log(1 + exp(x)), computed stably."""
    a = _lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _record((a,), out, lambda g: (g * _sigmoid_np(x),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact erf-based GELU."""
    a = _lift(a)
    x = a.data
    cdf = 0.5 * (1.0 + _special.erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _record((a,), out, vjp)


# ---------------------------------------------------------------------------
# reductions / shape

def reduce_sum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record((a,), out, vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy() / count,)

    return _record((a,), out, vjp)


def reshape(a, shape):
    a = _lift(a)
    out = a.data.reshape(shape)
    src = a.shape
    return _record((a,), out, lambda g: (g.reshape(src),))


def transpose(a, axes=None):
    a = _lift(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _record((a,), out, lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = tuple(_lift(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(tensors, out, vjp)


def stack(tensors, axis=0):
    tensors = tuple(_lift(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return _record(tensors, out, vjp)


def getitem(a, idx):
    a = _lift(a)
    out = a.data[idx]
    advanced = _has_advanced_index(idx)

    def vjp(g):
        da = np.zeros_like(a.data)
        if advanced:
            np.add.at(da, idx, g)
        else:
            da[idx] = g
        return (da,)

    return _record((a,), out, vjp)


def _has_advanced_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def index_select(a, axis, indices):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = _lift(a)
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(np.moveaxis(da, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (da,)

    return _record((a,), out, vjp)


# ---------------------------------------------------------------------------
# softmax family / normalization

def softmax(a, axis=-1):
    a = _lift(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record((a,), out, vjp)


def log_softmax(a, axis=-1):
    a = _lift(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record((a,), out, vjp)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    dim = a.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record((a, gain, bias), out, vjp)


# ---------------------------------------------------------------------------
# categorical utilities

def one_hot(indices, depth, dtype=np.float32):
    """Pure one-hot encoding of an integer array; not differentiable."""
    indices = np.asarray(indices)
    out = np.zeros(indices.shape + (depth,), dtype=dtype)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return Tensor(out)


def st_onehot(logits, rng=None, mode=False):
    """Hard one-hot over the last axis with a straight-through backward.

    Forward draws a categorical sample (Gumbel-max) from the logits, or the
    argmax when ``mode`` is true. Backward is exactly the VJP of
    softmax(logits), so a linear probe through this op gets the same
    gradient it would get through the soft probabilities.
    """
    logits = _lift(logits)
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    if mode:
        idx = x.argmax(axis=-1)
    else:
        if rng is None:
            raise ValueError("st_onehot: rng required unless mode=True")
        u = rng.random(x.shape, dtype=np.float64)
        gumbel = -np.log(-np.log(u + 1e-12) + 1e-12)
        idx = (x + gumbel.astype(x.dtype)).argmax(axis=-1)
    out = np.zeros_like(x)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)

    def vjp(g):
        dot = (g * probs).sum(axis=-1, keepdims=True)
        return (probs * (g - dot),)

    return _record((logits,), out, vjp)


def embedding_lookup(table, indices):
    table = _lift(table)
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError("embedding_lookup", table.shape, indices.shape, detail="index out of range")
    out = table.data[indices]

    def vjp(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, indices.ravel(), g.reshape(-1, table.shape[-1]))
        return (dt,)

    return _record((table,), out, vjp)


def where(cond, a, b):
    """Select by a constant boolean mask; no gradient flows through cond."""
    a, b = _lift(a), _lift(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _record((a, b), out, vjp)


# ---------------------------------------------------------------------------
# spatial ops

def conv2d(x, w, bias=None, stride=1, padding=0):
    """2D convolution, NCHW input and OIHW weights."""
    x, w = _lift(x), _lift(w)
    use_bias = bias is not None
    if use_bias:
        bias = _lift(bias)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", x.shape, w.shape, detail="expected NCHW and OIHW")
    n, c, h, wdt = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError("conv2d", x.shape, w.shape, detail="channel mismatch")
    s, p = int(stride), int(padding)
    oh = (h + 2 * p - kh) // s + 1
    ow = (wdt + 2 * p - kw) // s + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    acc = np.zeros((n, oh, ow, o), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xs = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
            acc += np.tensordot(xs, w.data[:, :, ki, kj], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if use_bias:
        out = out + bias.data[None, :, None, None]

    def vjp(g):
        gt = g.transpose(0, 2, 3, 1)
        dw = np.zeros_like(w.data)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                xs = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
                dw[:, :, ki, kj] = np.tensordot(gt, xs, axes=([0, 1, 2], [0, 2, 3]))
                dxs = np.tensordot(gt, w.data[:, :, ki, kj], axes=([3], [0]))
                dxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += dxs.transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + h, p:p + wdt] if p else dxp
        if use_bias:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    inputs = (x, w, bias) if use_bias else (x, w)
    return _record(inputs, out, vjp)


def upsample_nearest2d(x, factor):
    """Nearest-neighbor upsampling by an integer factor (NCHW)."""
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError("upsample_nearest2d", x.shape, detail="expected NCHW")
    k = int(factor)
    out = x.data.repeat(k, axis=2).repeat(k, axis=3)
    n, c, h, w = x.shape

    def vjp(g):
        return (g.reshape(n, c, h, k, w, k).sum(axis=(3, 5)),)

    return _record((x,), out, vjp)


# ---------------------------------------------------------------------------
# recurrent cell

def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """Single GRU step; gate order (reset, update, candidate).

    Composite of taped primitives, so its VJP comes from the chain rule.
    ``w_ih``: (in, 3H), ``w_hh``: (H, 3H), biases (3H,).
    """
    x, h = _lift(x), _lift(h)
    hid = h.shape[-1]
    if w_ih.shape != (x.shape[-1], 3 * hid) or w_hh.shape != (hid, 3 * hid):
        raise ShapeError("gru_cell", x.shape, h.shape, w_ih.shape, w_hh.shape)
    gi = add(matmul(x, w_ih), b_ih)
    gh = add(matmul(h, w_hh), b_hh)
    i_r, i_z, i_n = (getitem(gi, (Ellipsis, slice(j * hid, (j + 1) * hid))) for j in range(3))
    h_r, h_z, h_n = (getitem(gh, (Ellipsis, slice(j * hid, (j + 1) * hid))) for j in range(3))
    r = sigmoid(add(i_r, h_r))
    z = sigmoid(add(i_z, h_z))
    n = tanh(add(i_n, mul(r, h_n)))
    return add(n, mul(z, sub(h, n)))


# ---------------------------------------------------------------------------
# dispatch surface

PRIMITIVES = {
    "matmul": matmul,
    "conv2d": conv2d,
    "upsample_nearest2d": upsample_nearest2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "maximum": maximum,
    "where": where,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "relu": relu,
    "softplus": softplus,
    "gelu": gelu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "gru_cell": gru_cell,
    "embedding_lookup": embedding_lookup,
    "one_hot": one_hot,
    "st_onehot": st_onehot,
    "concat": concat,
    "stack": stack,
    "reshape": reshape,
    "transpose": transpose,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "getitem": getitem,
    "index_select": index_select,
}


def apply_primitive(name, *inputs, **kwargs):
    """Validated dispatch into the primitive registry.

    Rejects unknown names and non-finite tensor inputs; the returned tensor
    is recorded on the active tape like any direct call.
    """
    fn = PRIMITIVES.get(name)
    if fn is None:
        raise KeyError(f"unknown primitive {name!r}; known: {sorted(PRIMITIVES)}")
    for i, inp in enumerate(inputs):
        arr = inp.data if isinstance(inp, Tensor) else np.asarray(inp)
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: input {i} contains NaN/Inf")
    return fn(*inputs, **kwargs)
