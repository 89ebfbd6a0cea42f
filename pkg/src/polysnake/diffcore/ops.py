"""Dense differentiable operators.

Layout conventions: images are ``[B, H, W, C]``, conv2d kernels are
``[kh, kw, C_in, C_out]``, linear weights are ``[C_in, C_out]`` and act on the
last axis. Broadcasting is limited to what bias additions and scalar factors
need.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .array import ContractError, DiffArray, as_array, make_op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    sa, sb = a.shape, b.shape
    return make_op(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    sa, sb = a.shape, b.shape
    return make_op(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    av, bv = a.value, b.value
    return make_op(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(x: DiffArray, c: float) -> DiffArray:
    return make_op(x.value * c, (x,), lambda g: (g * c,))


def add_scalar(x: DiffArray, c: float) -> DiffArray:
    return make_op(x.value + c, (x,), lambda g: (g,))


def one_minus(x: DiffArray) -> DiffArray:
    return make_op(1.0 - x.value, (x,), lambda g: (-g,))


def sum(x: DiffArray, axis=None) -> DiffArray:  # noqa: A001 - mirrors numpy
    shape = x.shape
    v = x.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(v, (x,), backward)


def mean(x: DiffArray, axis=None) -> DiffArray:
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis), 1.0 / float(n))


def reshape(x: DiffArray, shape) -> DiffArray:
    old = x.shape
    return make_op(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: DiffArray, axes) -> DiffArray:
    inv = np.argsort(axes)
    return make_op(x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: DiffArray, idx) -> DiffArray:
    shape, dtype = x.shape, x.value.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_op(x.value[idx], (x,), backward)


def roll(x: DiffArray, shift: int, axis: int) -> DiffArray:
    return make_op(np.roll(x.value, shift, axis=axis), (x,),
                   lambda g: (np.roll(g, -shift, axis=axis),))


def concat(xs: Sequence[DiffArray], axis: int = -1) -> DiffArray:
    xs = [as_array(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
                x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax):
            raise ContractError(f"concat shape mismatch: {[x.shape for x in xs]}")
    sizes = [x.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return make_op(np.concatenate([x.value for x in xs], axis=ax), xs,
                   lambda g: tuple(np.split(g, splits, axis=ax)))


def relu(x: DiffArray) -> DiffArray:
    mask = x.value > 0
    return make_op(x.value * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: DiffArray) -> DiffArray:
    s = expit(x.value)
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: DiffArray) -> DiffArray:
    t = np.tanh(x.value)
    return make_op(t, (x,), lambda g: (g * (1.0 - t * t),))


def linear(x: DiffArray, w: DiffArray, b: DiffArray | None = None) -> DiffArray:
    """Fully connected layer over the last axis; also serves as a 1x1 conv."""
    if x.shape[-1] != w.shape[0]:
        raise ContractError(f"linear: input has {x.shape[-1]} channels, weight expects {w.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, w.shape[0])
    out = x2 @ w.value
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ContractError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.value
    out = out.reshape(lead + (w.shape[1],))
    wv = w.value

    def backward(g):
        g2 = g.reshape(-1, wv.shape[1])
        gx = (g2 @ wv.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


conv1d_1x1 = linear
fully_connected = linear


def layer_norm(x: DiffArray, gain: DiffArray, bias: DiffArray, eps: float = 1e-5,
               n_axes: int = 1) -> DiffArray:
    """Standardise over the trailing ``n_axes`` axes, then apply a per-channel gain and bias.

    ``n_axes=2`` on ``[M, N_v, C]`` normalises each contour as a whole, which keeps
    relative differences between its vertices.
    """
    C = x.shape[-1]
    if gain.shape != (C,) or bias.shape != (C,):
        raise ContractError(f"layer_norm: gain/bias must be ({C},), got {gain.shape}, {bias.shape}")
    if not 1 <= n_axes <= x.ndim:
        raise ContractError(f"layer_norm: n_axes={n_axes} for a {x.ndim}-d input")
    ax = tuple(range(x.ndim - n_axes, x.ndim))
    mu = x.value.mean(axis=ax, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value

    def backward(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gb = g.sum(axis=red) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            d = g * gv
            gx = inv * (d - d.mean(axis=ax, keepdims=True)
                        - xhat * (d * xhat).mean(axis=ax, keepdims=True))
        return gx, gg, gb

    return make_op(xhat * gv + bias.value, (x, gain, bias), backward)


def conv2d(x: DiffArray, w: DiffArray, b: DiffArray | None = None,
           stride: int = 1, padding: int = 0) -> DiffArray:
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d expects [B,H,W,C] input and [kh,kw,Cin,Cout] kernel, got {x.shape}, {w.shape}")
    B, H, W, C = x.shape
    kh, kw, cin, cout = w.shape
    if cin != C:
        raise ContractError(f"conv2d: input has {C} channels, kernel expects {cin}")
    xp = x.value
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    Hp, Wp = xp.shape[1:3]
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ContractError("conv2d: kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    # win: [B, Ho, Wo, C, kh, kw] -> cols ordered (kh, kw, C)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)
    wm = w.value.reshape(kh * kw * C, cout)
    out = cols @ wm
    if b is not None:
        out += b.value
    out = out.reshape(B, Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros((B, Hp, Wp, C), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, padding:padding + H, padding:padding + W, :] if padding else dxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def max_pool2d(x: DiffArray, size: int = 3, stride: int = 1, padding: int = 1) -> DiffArray:
    """Max pooling over [B, H, W, C]; gradient goes to the first maximal cell."""
    B, H, W, C = x.shape
    xp = np.pad(x.value, ((0, 0), (padding, padding), (padding, padding), (0, 0)),
                constant_values=-np.inf)
    win = sliding_window_view(xp, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1:3]
    flat = win.reshape(B, Ho, Wo, C, size * size)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        di, dj = np.divmod(arg, size)
        bi, oi, oj, ci = np.indices(arg.shape)
        rows = oi * stride + di - padding
        colz = oj * stride + dj - padding
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (bi, rows, colz, ci), g)
        return (gx,)

    return make_op(out, (x,), backward)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights, [n_out, n_in]."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def resize_bilinear(x: DiffArray, out_h: int, out_w: int) -> DiffArray:
    B, H, W, C = x.shape
    ah = _interp_matrix(H, out_h, x.value.dtype)
    aw = _interp_matrix(W, out_w, x.value.dtype)
    t = np.einsum("oh,bhwc->bowc", ah, x.value, optimize=True)
    out = np.einsum("pw,bowc->bopc", aw, t, optimize=True)

    def backward(g):
        gt = np.einsum("pw,bopc->bowc", aw, g, optimize=True)
        return (np.einsum("oh,bowc->bhwc", ah, gt, optimize=True),)

    return make_op(out, (x,), backward)


def upsample2x(x: DiffArray) -> DiffArray:
    return resize_bilinear(x, 2 * x.shape[1], 2 * x.shape[2])
