"""Operators over closed vertex rings: circular convolution and bilinear sampling."""

from __future__ import annotations

import numpy as np

from .array import ContractError, DiffArray, as_array, make_op


def circular_conv1d(x: DiffArray, kernel: DiffArray, bias: DiffArray | None = None) -> DiffArray:
    """1-D convolution along the vertex axis with wrap-around indexing.

    ``x`` is ``[..., N, C_in]``, ``kernel`` is ``[C_out, C_in, ks]`` with odd
    ``ks``. Output row ``i`` sums ``kernel[:, :, t + ks//2] @ x[(i + t) mod N]``
    over taps ``t`` in ``[-(ks-1)/2, (ks-1)/2]``.
    """
    x, kernel = as_array(x), as_array(kernel)
    if kernel.ndim != 3:
        raise ContractError(f"kernel must be [C_out, C_in, ks], got {kernel.shape}")
    cout, cin, ks = kernel.shape
    if ks % 2 == 0:
        raise ContractError(f"circular_conv1d needs an odd kernel size, got {ks}")
    if x.ndim < 2 or x.shape[-1] != cin:
        raise ContractError(f"input {x.shape} does not match kernel C_in={cin}")
    n = x.shape[-2]
    if n < ks:
        raise ContractError(f"ring of {n} vertices is shorter than kernel size {ks}")
    if bias is not None and bias.shape != (cout,):
        raise ContractError(f"bias shape {bias.shape} != ({cout},)")

    lead = x.shape[:-2]
    half = ks // 2
    taps = np.arange(-half, half + 1)
    idx = (np.arange(n)[:, None] + taps[None, :]) % n          # [N, ks]
    cols = x.value[..., idx, :].reshape(-1, ks * cin)           # rows ordered (..., N)
    wm = kernel.value.transpose(2, 1, 0).reshape(ks * cin, cout)
    out = cols @ wm
    if bias is not None:
        out += bias.value
    out = out.reshape(lead + (n, cout))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gk = None
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(ks, cin, cout).transpose(2, 1, 0)
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(lead + (n, ks, cin))
            gx = np.zeros(x.shape, dtype=g.dtype)
            for t, off in enumerate(taps):
                gx += np.roll(dcols[..., t, :], off, axis=-2)
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_op(out, parents, backward)


def bilinear_sample_points(F: DiffArray, pts: DiffArray, batch_index=None) -> DiffArray:
    """Sample ``F`` at fractional ``(x, y)`` locations.

    ``F`` is ``[H, W, D]`` or ``[B, H, W, D]``; ``pts`` is ``[..., 2]`` with x
    along width. For batched ``F`` a ``batch_index`` of shape ``pts.shape[:-2]``
    (or broadcastable to ``pts.shape[:-1]``) picks the image for each point.
    Coordinates are clamped to the border; the clamped direction gets zero
    gradient.
    """
    F, pts = as_array(F), as_array(pts)
    fv = F.value
    if fv.ndim == 3:
        fv = fv[None]
    B, H, W, D = fv.shape
    pv = pts.value
    lead = pv.shape[:-1]
    if batch_index is None:
        if B != 1:
            raise ContractError("batched feature map needs a batch_index")
        bi = np.zeros(lead, dtype=np.intp)
    else:
        bi = np.asarray(batch_index, dtype=np.intp)
        while bi.ndim < len(lead):
            bi = bi[..., None]
        bi = np.broadcast_to(bi, lead)

    px, py = pv[..., 0], pv[..., 1]
    x = np.clip(px, 0, W - 1)
    y = np.clip(py, 0, H - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(W - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wdt = np.result_type(fv.dtype, pv.dtype)
    wx = (x - x0).astype(wdt)[..., None]
    wy = (y - y0).astype(wdt)[..., None]
    f00 = fv[bi, y0, x0]
    f01 = fv[bi, y0, x1]
    f10 = fv[bi, y1, x0]
    f11 = fv[bi, y1, x1]
    out = (1 - wx) * (1 - wy) * f00 + wx * (1 - wy) * f01 + (1 - wx) * wy * f10 + wx * wy * f11
    inside_x = ((px >= 0) & (px <= W - 1))[..., None]
    inside_y = ((py >= 0) & (py <= H - 1))[..., None]

    def backward(g):
        gF = gp = None
        if F.requires_grad:
            flat = np.zeros((B * H * W, D), dtype=g.dtype)
            base = bi * (H * W)
            for yy, xx, wgt in ((y0, x0, (1 - wx) * (1 - wy)), (y0, x1, wx * (1 - wy)),
                                (y1, x0, (1 - wx) * wy), (y1, x1, wx * wy)):
                np.add.at(flat, (base + yy * W + xx).ravel(), (wgt * g).reshape(-1, D))
            gF = flat.reshape(F.shape)
        if pts.requires_grad:
            dx = ((1 - wy) * (f01 - f00) + wy * (f11 - f10)) * inside_x
            dy = ((1 - wx) * (f10 - f00) + wx * (f11 - f01)) * inside_y
            gp = np.stack([(dx * g).sum(-1), (dy * g).sum(-1)], axis=-1)
        return gF, gp

    return make_op(out, (F, pts), backward)


def bilinear_sample(F: DiffArray, p) -> DiffArray:
    """Sample a single point ``p = (x, y)`` from ``F [H, W, D]``; returns ``[D]``."""
    p = as_array(p)
    if p.shape != (2,):
        raise ContractError(f"point must have shape (2,), got {p.shape}")
    return bilinear_sample_points(F, p)
